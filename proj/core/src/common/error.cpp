#include "mmalign/common/error.hpp"

namespace mmalign {

void raise(const std::string& code, const std::string& message, const std::string& context) {
  throw Error(code, message, context);
}

}  // namespace mmalign
