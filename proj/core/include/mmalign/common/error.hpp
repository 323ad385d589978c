#pragma once

#include <stdexcept>
#include <string>

namespace mmalign {

/// Error carrying a stable machine-readable code alongside the message.
/// The CLI surfaces these as single-line JSON on stderr.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message, std::string context = {})
      : std::runtime_error(message), code_(std::move(code)), context_(std::move(context)) {}

  const std::string& code() const noexcept { return code_; }
  const std::string& context() const noexcept { return context_; }

 private:
  std::string code_;
  std::string context_;
};

[[noreturn]] void raise(const std::string& code, const std::string& message,
                        const std::string& context = {});

}  // namespace mmalign

// Precondition / invariant check. `code` is a short stable identifier.
#define MMA_REQUIRE(cond, code, message)          \
  do {                                            \
    if (!(cond)) ::mmalign::raise(code, message); \
  } while (0)
