#include "metapriv/collision.hpp"

#include <cmath>
#include <stdexcept>

#include "metapriv/rng.hpp"

namespace metapriv {

namespace {

double gate_of(double z) {
    if (std::fabs(z) < kKinkTolerance)
        throw std::domain_error("neuron derivative undefined at the rectifier kink (|z| < 1e-9)");
    return z >= 0.0 ? 1.0 : 0.0;
}

}  // namespace

double neuron_loss(const NeuronModel& m, const NeuronSample& s) {
    const double z = m.a * s.x + m.b;
    const double yhat = z > 0.0 ? z : 0.0;
    return (yhat - s.y) * (yhat - s.y);
}

Vec2 neuron_gradient(const NeuronModel& m, const NeuronSample& s) {
    const double z = m.a * s.x + m.b;
    const double gate = gate_of(z);
    const double yhat = gate * z;
    return {2.0 * s.x * (yhat - s.y) * gate, 2.0 * (yhat - s.y) * gate};
}

Mat2 neuron_hessian(const NeuronModel& m, const NeuronSample& s) {
    const double z = m.a * s.x + m.b;
    const double gate = gate_of(z);
    return {{{2.0 * s.x * s.x * gate, 2.0 * s.x * gate}, {2.0 * s.x * gate, 2.0 * gate}}};
}

Mat2 neuron_hessian_variant(const NeuronModel& m, const NeuronSample& s) {
    const double z = m.a * s.x + m.b;
    const double gate = gate_of(z);
    return {{{2.0 * s.x * (s.x - s.y) * gate, 2.0 * s.x * (1.0 - s.y) * gate},
             {2.0 * (s.x - s.y) * gate, 2.0 * (1.0 - s.y) * gate}}};
}

Vec2 neuron_shared_gradient(const NeuronModel& omega, const NeuronSample& support, const NeuronSample& query,
                            double alpha) {
    const Vec2 gs = neuron_gradient(omega, support);
    const NeuronModel theta{omega.a - alpha * gs[0], omega.b - alpha * gs[1]};
    const Vec2 gq = neuron_gradient(theta, query);
    const Mat2 h = neuron_hessian(omega, support);
    return {gq[0] - alpha * (h[0][0] * gq[0] + h[0][1] * gq[1]),
            gq[1] - alpha * (h[1][0] * gq[0] + h[1][1] * gq[1])};
}

const char* collision_failure_name(CollisionFailure f) {
    switch (f) {
        case CollisionFailure::None: return "none";
        case CollisionFailure::SingularPullback: return "singular_pullback";
        case CollisionFailure::UnrealizableGradient: return "unrealizable_gradient";
        case CollisionFailure::GateMismatch: return "gate_mismatch";
        case CollisionFailure::Kink: return "kink";
    }
    return "none";
}

CollisionReport find_gradient_collision(const NeuronModel& omega, const NeuronSample& true_support,
                                        const NeuronSample& true_query, const NeuronSample& candidate_support,
                                        double alpha) {
    CollisionReport rep;
    rep.shared_gradient = neuron_shared_gradient(omega, true_support, true_query, alpha);

    const Mat2 h = neuron_hessian(omega, candidate_support);
    const Mat2 hv = neuron_hessian_variant(omega, candidate_support);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) rep.variant_gap = std::max(rep.variant_gap, std::fabs(h[i][j] - hv[i][j]));

    // A = I - alpha*H at the candidate support; undo it to recover what the
    // query-loss gradient at the adapted point must have been.
    const double a00 = 1.0 - alpha * h[0][0], a01 = -alpha * h[0][1];
    const double a10 = -alpha * h[1][0], a11 = 1.0 - alpha * h[1][1];
    rep.det_pullback = a00 * a11 - a01 * a10;
    if (std::fabs(rep.det_pullback) <= 1e-12) {
        rep.failure = CollisionFailure::SingularPullback;
        return rep;
    }
    const double u =
        (a11 * rep.shared_gradient[0] - a01 * rep.shared_gradient[1]) / rep.det_pullback;
    const double v =
        (a00 * rep.shared_gradient[1] - a10 * rep.shared_gradient[0]) / rep.det_pullback;
    rep.pulled_back = {u, v};

    const Vec2 gs = neuron_gradient(omega, candidate_support);
    const NeuronModel theta{omega.a - alpha * gs[0], omega.b - alpha * gs[1]};

    if (v == 0.0 && u != 0.0) {
        // Active regime forces u = x'*v; the inactive regime emits zero.
        rep.failure = CollisionFailure::UnrealizableGradient;
        return rep;
    }

    NeuronSample q;
    if (u == 0.0 && v == 0.0) {
        // Any perfectly fit sample clear of the kink replays a zero gradient.
        q.x = 0.0;
        double z = theta.a * q.x + theta.b;
        for (int k = 1; k <= 8 && std::fabs(z) < kKinkTolerance; ++k) {
            q.x = static_cast<double>(k);
            z = theta.a * q.x + theta.b;
        }
        if (std::fabs(z) < kKinkTolerance) {
            rep.failure = CollisionFailure::Kink;
            return rep;
        }
        q.y = z > 0.0 ? z : -1.0;  // inactive branch: any positive target gap keeps G = 0
    } else {
        q.x = u / v;
        const double z = theta.a * q.x + theta.b;
        if (std::fabs(z) < kKinkTolerance) {
            rep.failure = CollisionFailure::Kink;
            return rep;
        }
        if (z < 0.0) {
            rep.failure = CollisionFailure::GateMismatch;
            return rep;
        }
        q.y = z - v / 2.0;
    }
    rep.constructed_query = q;

    const Vec2 replay = neuron_shared_gradient(omega, candidate_support, q, alpha);
    rep.replay_error = std::max(std::fabs(replay[0] - rep.shared_gradient[0]),
                                std::fabs(replay[1] - rep.shared_gradient[1]));
    rep.ok = rep.replay_error < 1e-6;
    return rep;
}

CollisionCase random_admissible_case(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0xc0111));
    CollisionCase c;
    c.alpha = 0.4;
    for (int attempt = 0; attempt < 1000; ++attempt) {
        c.omega = {rng.uniform(-1.0, 1.0), rng.uniform(0.2, 1.0)};
        c.support = {rng.uniform(0.1, 1.0), rng.uniform(-0.5, 0.5)};
        c.query = {rng.uniform(0.1, 1.0), rng.uniform(-0.5, 0.5)};
        c.candidate_support = {rng.uniform(0.1, 1.0), rng.uniform(-0.5, 0.5)};

        const auto active = [&](const NeuronModel& m, const NeuronSample& s) { return m.a * s.x + m.b > 0.05; };
        if (!active(c.omega, c.support) || !active(c.omega, c.candidate_support)) continue;
        try {
            const Vec2 gs = neuron_gradient(c.omega, c.support);
            const NeuronModel theta{c.omega.a - c.alpha * gs[0], c.omega.b - c.alpha * gs[1]};
            if (!active(theta, c.query)) continue;
            const Mat2 h = neuron_hessian(c.omega, c.candidate_support);
            const double det = (1.0 - c.alpha * h[0][0]) * (1.0 - c.alpha * h[1][1]) -
                               c.alpha * h[0][1] * c.alpha * h[1][0];
            if (std::fabs(det) < 1e-3) continue;
            const CollisionReport probe = find_gradient_collision(c.omega, c.support, c.query, c.candidate_support,
                                                                  c.alpha);
            if (probe.failure != CollisionFailure::None) continue;
        } catch (const std::domain_error&) {
            continue;
        }
        return c;
    }
    throw std::runtime_error("random_admissible_case: no admissible instance found");
}

}  // namespace metapriv
