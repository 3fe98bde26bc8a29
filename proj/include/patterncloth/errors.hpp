#pragma once

#include <stdexcept>
#include <string>

namespace patterncloth {

struct GenerationFailed : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DuplicateKey : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BehindCamera : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateRays : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DisconnectedMask : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SingularSystem : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConvergenceFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SolverDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InsufficientData : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MalformedFile : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace patterncloth
