#pragma once

#include <stdexcept>
#include <string>

namespace pointbrush {

/// Base error for everything the library reports. Messages are stable and
/// surface verbatim through the CLI and the HTTP service.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input bytes or files.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// ICP could not find enough correspondences to continue.
class RegistrationLost : public Error {
 public:
  explicit RegistrationLost(std::size_t correspondences)
      : Error("registration lost: " + std::to_string(correspondences) + " correspondences"),
        correspondences_(correspondences) {}

  std::size_t correspondences() const noexcept { return correspondences_; }

 private:
  std::size_t correspondences_;
};

}  // namespace pointbrush
