#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <string>

#include <metapriv/collision.hpp>

using namespace metapriv;

namespace {

// Central differences of the loss over (a, b).
Vec2 fd_loss_grad(const NeuronModel& m, const NeuronSample& s, double h = 1e-6) {
    const double da = (neuron_loss({m.a + h, m.b}, s) - neuron_loss({m.a - h, m.b}, s)) / (2 * h);
    const double db = (neuron_loss({m.a, m.b + h}, s) - neuron_loss({m.a, m.b - h}, s)) / (2 * h);
    return {da, db};
}

// Central differences of the gradient, one column per parameter.
Mat2 fd_hessian(const NeuronModel& m, const NeuronSample& s, double h = 1e-5) {
    const Vec2 ga_p = neuron_gradient({m.a + h, m.b}, s), ga_m = neuron_gradient({m.a - h, m.b}, s);
    const Vec2 gb_p = neuron_gradient({m.a, m.b + h}, s), gb_m = neuron_gradient({m.a, m.b - h}, s);
    return {{{(ga_p[0] - ga_m[0]) / (2 * h), (gb_p[0] - gb_m[0]) / (2 * h)},
             {(ga_p[1] - ga_m[1]) / (2 * h), (gb_p[1] - gb_m[1]) / (2 * h)}}};
}

double pipeline_loss(const NeuronModel& omega, const NeuronSample& support, const NeuronSample& query, double alpha) {
    const Vec2 gs = neuron_gradient(omega, support);
    return neuron_loss({omega.a - alpha * gs[0], omega.b - alpha * gs[1]}, query);
}

}  // namespace

TEST_CASE("loss and gradient closed forms") {
    CHECK(neuron_loss({1.0, 0.0}, {1.0, 0.0}) == 1.0);
    CHECK(neuron_loss({1.0, -5.0}, {1.0, 0.5}) == 0.25);

    const Vec2 closed = neuron_gradient({1.0, -5.0}, {1.0, 0.0});
    CHECK(closed[0] == 0.0);
    CHECK(closed[1] == 0.0);

    const Vec2 active = neuron_gradient({1.0, 0.0}, {1.0, 0.0});
    CHECK(active[0] == 2.0);
    CHECK(active[1] == 2.0);
}

TEST_CASE("gradient matches finite differences away from the kink") {
    const NeuronModel active{0.8, 0.3};
    const NeuronSample sa{0.7, -0.2};
    const Vec2 g = neuron_gradient(active, sa);
    const Vec2 fd = fd_loss_grad(active, sa);
    CHECK(std::fabs(g[0] - fd[0]) < 1e-6);
    CHECK(std::fabs(g[1] - fd[1]) < 1e-6);

    const NeuronModel off{0.5, -1.0};
    const NeuronSample sb{1.0, 0.4};
    const Vec2 g2 = neuron_gradient(off, sb);
    const Vec2 fd2 = fd_loss_grad(off, sb);
    CHECK(g2[0] == 0.0);
    CHECK(g2[1] == 0.0);
    CHECK(std::fabs(fd2[0]) < 1e-6);
    CHECK(std::fabs(fd2[1]) < 1e-6);
}

TEST_CASE("derivatives are rejected at the rectifier kink") {
    const NeuronModel m{1.0, -1.0};
    const NeuronSample on_kink{1.0, 0.3};
    CHECK_THROWS_AS(neuron_gradient(m, on_kink), std::domain_error);
    CHECK_THROWS_AS(neuron_hessian(m, on_kink), std::domain_error);
    CHECK_THROWS_AS(neuron_shared_gradient(m, on_kink, {2.0, 0.1}, 0.1), std::domain_error);

    const NeuronSample near_kink{(1.0 - 5e-10), 0.3};
    CHECK_THROWS_AS(neuron_gradient(m, near_kink), std::domain_error);
    const NeuronSample clear{(1.0 - 5e-9), 0.3};
    CHECK_NOTHROW(neuron_gradient(m, clear));
}

TEST_CASE("hessian closed form, symmetry, and finite differences") {
    const Mat2 closed = neuron_hessian({1.0, -5.0}, {1.0, 0.0});
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(closed[i][j] == 0.0);

    const NeuronModel m{1.0, 0.0};
    const NeuronSample s{1.0, 0.0};
    const Mat2 h = neuron_hessian(m, s);
    CHECK(h[0][0] == 2.0);
    CHECK(h[0][1] == 2.0);
    CHECK(h[1][0] == 2.0);
    CHECK(h[1][1] == 2.0);
    CHECK(std::fabs(h[0][1] - h[1][0]) < 1e-10);

    const Mat2 fd = fd_hessian(m, s);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(std::fabs(h[i][j] - fd[i][j]) < 1e-5);

    const NeuronModel m2{0.6, 0.4};
    const NeuronSample s2{0.9, 0.7};
    const Mat2 h2 = neuron_hessian(m2, s2);
    const Mat2 fd2 = fd_hessian(m2, s2);
    CHECK(std::fabs(h2[0][1] - h2[1][0]) < 1e-10);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(std::fabs(h2[i][j] - fd2[i][j]) < 1e-5);
}

TEST_CASE("the hand-derived hessian variant deviates once the target is nonzero") {
    const NeuronModel m{1.0, 0.2};
    const Mat2 h0 = neuron_hessian(m, {0.5, 0.0});
    const Mat2 v0 = neuron_hessian_variant(m, {0.5, 0.0});
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(h0[i][j] == v0[i][j]);

    const Mat2 h1 = neuron_hessian(m, {0.5, 0.3});
    const Mat2 v1 = neuron_hessian_variant(m, {0.5, 0.3});
    double gap = 0;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) gap = std::max(gap, std::fabs(h1[i][j] - v1[i][j]));
    CHECK(gap > 0.1);
}

TEST_CASE("shared gradient differentiates the whole adaptation pipeline") {
    const NeuronModel omega{0.9, 0.4};
    const NeuronSample support{0.6, 0.1};
    const NeuronSample query{0.5, 0.3};
    const double alpha = 0.3;

    const Vec2 g = neuron_shared_gradient(omega, support, query, alpha);
    const double h = 1e-6;
    const double fda = (pipeline_loss({omega.a + h, omega.b}, support, query, alpha) -
                        pipeline_loss({omega.a - h, omega.b}, support, query, alpha)) /
                       (2 * h);
    const double fdb = (pipeline_loss({omega.a, omega.b + h}, support, query, alpha) -
                        pipeline_loss({omega.a, omega.b - h}, support, query, alpha)) /
                       (2 * h);
    CHECK(std::fabs(g[0] - fda) < 1e-5);
    CHECK(std::fabs(g[1] - fdb) < 1e-5);

    const Vec2 at_zero = neuron_shared_gradient(omega, support, query, 0.0);
    const Vec2 plain = neuron_gradient(omega, query);
    CHECK(at_zero[0] == plain[0]);
    CHECK(at_zero[1] == plain[1]);
}

TEST_CASE("failure names cover every condition") {
    CHECK(std::string(collision_failure_name(CollisionFailure::None)) == "none");
    CHECK(std::string(collision_failure_name(CollisionFailure::SingularPullback)) == "singular_pullback");
    CHECK(std::string(collision_failure_name(CollisionFailure::UnrealizableGradient)) == "unrealizable_gradient");
    CHECK(std::string(collision_failure_name(CollisionFailure::GateMismatch)) == "gate_mismatch");
    CHECK(std::string(collision_failure_name(CollisionFailure::Kink)) == "kink");
}

TEST_CASE("a gate-closed candidate support pulls back through the identity") {
    const CollisionReport rep =
        find_gradient_collision({1.0, 0.5}, {0.5, 0.2}, {0.8, -0.1}, {-1.0, 0.3}, 0.3);
    CHECK(rep.ok);
    CHECK(rep.failure == CollisionFailure::None);
    CHECK(rep.det_pullback == 1.0);
    CHECK(rep.pulled_back[0] == rep.shared_gradient[0]);
    CHECK(rep.pulled_back[1] == rep.shared_gradient[1]);
    CHECK(rep.replay_error < 1e-10);

    const Vec2 replay =
        neuron_shared_gradient({1.0, 0.5}, {-1.0, 0.3}, rep.constructed_query, 0.3);
    CHECK(std::fabs(replay[0] - rep.shared_gradient[0]) < 1e-10);
    CHECK(std::fabs(replay[1] - rep.shared_gradient[1]) < 1e-10);
}

TEST_CASE("a singular pullback is reported, not inverted") {
    const CollisionReport rep =
        find_gradient_collision({0.5, 0.2}, {0.6, 0.1}, {0.4, 0.2}, {1.0, 0.3}, 0.25);
    CHECK(!rep.ok);
    CHECK(rep.failure == CollisionFailure::SingularPullback);
    CHECK(std::fabs(rep.det_pullback) <= 1e-12);
}

TEST_CASE("a pulled-back gradient with no generating sample is reported") {
    const CollisionReport rep =
        find_gradient_collision({1.0, 0.5}, {2.0, 2.0}, {0.5, 0.25}, {-1.0, 0.2}, 0.25);
    CHECK(!rep.ok);
    CHECK(rep.failure == CollisionFailure::UnrealizableGradient);
    CHECK(rep.det_pullback == 1.0);
    CHECK(rep.pulled_back[0] == -0.75);
    CHECK(rep.pulled_back[1] == 0.0);
}

TEST_CASE("a construction forced into the inactive region is reported") {
    const CollisionReport rep =
        find_gradient_collision({1.0, 0.5}, {2.0, 2.0}, {0.25, 0.125}, {-1.0, 0.2}, 0.25);
    CHECK(!rep.ok);
    CHECK(rep.failure == CollisionFailure::GateMismatch);
}

TEST_CASE("a construction pinned to the kink is reported") {
    const CollisionReport rep =
        find_gradient_collision({0.25, 1.0}, {2.0, 1.25}, {0.2, 0.375}, {-8.0, 0.1}, 0.25);
    CHECK(!rep.ok);
    CHECK(rep.failure == CollisionFailure::Kink);
}

TEST_CASE("a zero shared gradient is replayed by a perfectly fit query") {
    const CollisionReport rep =
        find_gradient_collision({1.0, 0.5}, {2.0, 2.0}, {0.5, 0.5}, {0.5, 0.5}, 0.25);
    CHECK(rep.ok);
    CHECK(rep.shared_gradient[0] == 0.0);
    CHECK(rep.shared_gradient[1] == 0.0);
    CHECK(rep.replay_error == 0.0);
}

TEST_CASE("seeded admissible instances collide with small replay error") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        CAPTURE(seed);
        const CollisionCase c = random_admissible_case(seed);
        CHECK(c.alpha == 0.4);
        const CollisionReport rep =
            find_gradient_collision(c.omega, c.support, c.query, c.candidate_support, c.alpha);
        CHECK(rep.ok);
        CHECK(rep.failure == CollisionFailure::None);
        CHECK(rep.replay_error < 1e-6);
        CHECK(std::fabs(rep.det_pullback) > 1e-3);
        CHECK(rep.variant_gap > 0.0);

        const bool support_differs =
            c.candidate_support.x != c.support.x || c.candidate_support.y != c.support.y;
        CHECK(support_differs);
    }
}

TEST_CASE("admissible instances are deterministic in the seed") {
    const CollisionCase a = random_admissible_case(5);
    const CollisionCase b = random_admissible_case(5);
    CHECK(a.omega.a == b.omega.a);
    CHECK(a.omega.b == b.omega.b);
    CHECK(a.support.x == b.support.x);
    CHECK(a.query.y == b.query.y);
    CHECK(a.candidate_support.x == b.candidate_support.x);

    const CollisionCase c = random_admissible_case(6);
    CHECK(a.omega.a != c.omega.a);
}
