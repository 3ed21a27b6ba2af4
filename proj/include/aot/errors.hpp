#pragma once

#include <stdexcept>
#include <string>

namespace aot {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (malformed box, placement out of
// bounds, dimension mismatch, ...).
struct ContractViolation : Error {
  using Error::Error;
};

// Bad or missing configuration, caught at startup. Maps to exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

struct StorageError : Error {
  using Error::Error;
};

// A model-service call failed in a way that may succeed on retry: connection
// refused, non-2xx status, unparseable body.
struct TransportError : Error {
  using Error::Error;
};

// All retry attempts were consumed; carries the last cause in the message.
struct RetriesExhausted : Error {
  RetriesExhausted(int attempts, const std::string& cause)
      : Error("retries exhausted after " + std::to_string(attempts) +
              " attempts: " + cause),
        attempts_made(attempts) {}
  int attempts_made;
};

}  // namespace aot
