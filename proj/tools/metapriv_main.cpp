#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "metapriv/experiment.hpp"

namespace {

struct CliState {
    metapriv::ExperimentSpec spec;
    std::string target = "query";
    std::string order = "second";
};

void add_common(CLI::App* cmd, CliState& st) {
    auto& s = st.spec;
    cmd->add_option("--dataset", s.dataset, "synthetic or mnist");
    cmd->add_option("--images", s.images_path, "IDX image file (mnist)");
    cmd->add_option("--labels", s.labels_path, "IDX label file (mnist)");
    cmd->add_option("--seed", s.seed, "master seed");
    cmd->add_option("--outdir", s.outdir, "output directory");
    cmd->add_option("--ways", s.ways, "classes per task")->delimiter(',');
    cmd->add_option("--shots", s.shots, "examples per class")->delimiter(',');
    cmd->add_option("--trials", s.trials, "game trials per cell (even)");
    cmd->add_option("--calibration-trials", s.calibration_trials, "threshold calibration trials (even)");
    cmd->add_option("--meta-test-tasks", s.meta_test_tasks, "tasks for meta-test accuracy");
    cmd->add_option("--target", st.target, "query or support")
        ->check(CLI::IsMember({"query", "support"}));
    cmd->add_option("--iterations", s.attack.iterations, "reconstruction iterations");
    cmd->add_option("--step-size", s.attack.step_size, "reconstruction step size");
    cmd->add_option("--tv-weight", s.attack.tv_weight, "total-variation weight");
    cmd->add_option("--alpha", s.train.alpha_inner, "inner-loop step size");
    cmd->add_option("--beta", s.train.beta_meta, "meta step size");
    cmd->add_option("--inner-steps", s.train.inner_steps, "inner-loop steps");
    cmd->add_option("--tasks-per-step", s.train.tasks_per_step, "task learners per meta step");
    cmd->add_option("--epochs", s.train.epochs, "training epochs");
    cmd->add_option("--meta-steps", s.train.meta_steps_per_epoch, "meta steps per epoch");
    cmd->add_option("--order", st.order, "first or second")
        ->check(CLI::IsMember({"first", "second"}));
    cmd->add_option("--checkpoint", s.checkpoint, "start from a saved model state");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Meta-learning privacy laboratory: gradient-matching membership attacks and noise defenses"};
    app.require_subcommand(1);

    CliState st;
    auto& s = st.spec;

    auto* train = app.add_subcommand("train", "Meta-train and write per-epoch model states");
    auto* attack_eval = app.add_subcommand("attack-eval", "Membership game over the ways/shots grid");
    auto* sweep_ways = app.add_subcommand("sweep-ways", "Attack accuracy as class count varies");
    auto* sweep_shots = app.add_subcommand("sweep-shots", "Attack accuracy as shot count varies");
    auto* sweep_epochs = app.add_subcommand("sweep-epochs", "Attack accuracy along a training run");
    auto* bench = app.add_subcommand("bench", "Reconstruction wall time over iterations and task size");
    auto* noise_sweep = app.add_subcommand("noise-sweep", "Defense sweep over noise sites and levels");
    auto* verify_theory = app.add_subcommand("verify-theory", "Single-neuron gradient collision construction");

    for (CLI::App* cmd : {train, attack_eval, sweep_ways, sweep_shots, sweep_epochs, noise_sweep}) add_common(cmd, st);
    add_common(bench, st);
    bench->add_option("--bench-iterations", s.bench_iterations, "iteration grid")->delimiter(',');
    bench->add_option("--bench-sizes", s.bench_sizes, "task size grid")->delimiter(',');
    bench->add_option("--bench-reps", s.bench_reps, "repetitions per cell (median reported)");
    noise_sweep->add_option("--sites", s.sites, "noise sites to sweep")->delimiter(',');
    noise_sweep->add_option("--sigmas", s.sigmas, "noise levels to sweep")->delimiter(',');
    noise_sweep->add_option("--mu", s.mu, "noise mean");
    verify_theory->add_option("--seed", s.seed, "master seed");
    verify_theory->add_option("--outdir", s.outdir, "output directory");

    CLI11_PARSE(app, argc, argv);

    s.command = app.get_subcommands().front()->get_name();
    s.target = st.target == "support" ? metapriv::TargetSet::Support : metapriv::TargetSet::Query;
    s.train.order = st.order == "first" ? metapriv::GradOrder::First : metapriv::GradOrder::Second;

    try {
        const metapriv::CommandResult res = metapriv::run_experiment(s);
        std::cout << metapriv::csv_header() << '\n';
        for (const auto& row : res.rows) std::cout << metapriv::csv_line(row) << '\n';
        for (const auto& f : res.files) std::cout << "wrote " << s.outdir << '/' << f << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
