#pragma once

#include "reliab/dataset.hpp"
#include "reliab/errors.hpp"
#include "reliab/evaluation.hpp"
#include "reliab/reliability.hpp"
#include "reliab/rls.hpp"
#include "reliab/synth.hpp"
#include "reliab/temporal.hpp"
