#include "smartcast/error.hpp"

#include <utility>

namespace smartcast {

StageError::StageError(std::string stage, ErrorKind kind, const std::string& cause)
    : Error(kind, "stage '" + stage + "': " + cause), stage_(std::move(stage)) {}

}  // namespace smartcast
