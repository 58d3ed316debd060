#pragma once

#include <stdexcept>
#include <string>

namespace reliab {

/// Caller supplied a value outside an operation's contract.
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A filter matched nothing.
struct EmptySelection : InvalidArgument {
  using InvalidArgument::InvalidArgument;
};

/// Input data is malformed: non-finite values, bad ids, corrupt files.
struct InvalidData : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Filesystem failure; the message names the path.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace reliab
