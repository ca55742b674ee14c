#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace metapriv {

// Minimal analytic model: one input, one rectified neuron, squared error.
//   z = a*x + b,  yhat = relu(z),  J = (yhat - y)^2
// Small enough that every derivative has a closed form, which makes it the
// reference vehicle for showing that a shared meta-gradient does not pin down
// the data that produced it: an adversary holding a wrong support guess can
// construct a query sample that replays the observed gradient exactly.

struct NeuronModel {
    double a = 0.0;
    double b = 0.0;
};

struct NeuronSample {
    double x = 0.0;
    double y = 0.0;
};

using Vec2 = std::array<double, 2>;
using Mat2 = std::array<std::array<double, 2>, 2>;

inline constexpr double kKinkTolerance = 1e-9;

double neuron_loss(const NeuronModel& m, const NeuronSample& s);

// dJ/d(a,b) = [2x(yhat-y)gate, 2(yhat-y)gate], gate = 1 when z >= 0.
// Throws std::domain_error within kKinkTolerance of the rectifier kink.
Vec2 neuron_gradient(const NeuronModel& m, const NeuronSample& s);

// Active-regime Hessian of J: 2*gate*[[x^2, x], [x, 1]].
Mat2 neuron_hessian(const NeuronModel& m, const NeuronSample& s);

// Cross-check matrix: a plausible-looking hand derivation of the same Hessian
// that mishandles the residual factor. Kept so reports can flag its gap from
// the finite-difference-validated matrix above.
Mat2 neuron_hessian_variant(const NeuronModel& m, const NeuronSample& s);

// One meta step on the neuron, mirroring the engine's convention:
//   theta = omega - alpha*G(omega, support)
//   g = (I - alpha*H(omega, support)) * G(theta, query)
Vec2 neuron_shared_gradient(const NeuronModel& omega, const NeuronSample& support, const NeuronSample& query,
                            double alpha);

enum class CollisionFailure {
    None,
    SingularPullback,       // det(I - alpha*H(candidate support)) ~ 0
    UnrealizableGradient,   // pulled-back gradient has no generating sample
    GateMismatch,           // forced sample lands in the inactive region
    Kink,                   // construction pinned to the nondifferentiable point
};

const char* collision_failure_name(CollisionFailure f);

struct CollisionReport {
    bool ok = false;
    CollisionFailure failure = CollisionFailure::None;
    double det_pullback = 0.0;
    Vec2 shared_gradient = {0.0, 0.0};   // g observed from the true task
    Vec2 pulled_back = {0.0, 0.0};       // A^{-1} g under the candidate support
    NeuronSample constructed_query;      // sample replaying g with the candidate
    double replay_error = 0.0;           // max-norm gap of the replayed gradient
    double variant_gap = 0.0;            // |validated - variant| Hessian gap
};

// Given the true task (support, query) and a candidate support guess, builds
// the query sample that makes (candidate_support, constructed_query) emit the
// same shared gradient, or reports precisely why none exists.
CollisionReport find_gradient_collision(const NeuronModel& omega, const NeuronSample& true_support,
                                        const NeuronSample& true_query, const NeuronSample& candidate_support,
                                        double alpha);

struct CollisionCase {
    NeuronModel omega;
    NeuronSample support;
    NeuronSample query;
    NeuronSample candidate_support;
    double alpha = 0.4;
};

// Deterministic instance with all gates active, clear of the kink, and an
// invertible pullback. Same seed, same case.
CollisionCase random_admissible_case(std::uint64_t seed);

}  // namespace metapriv
