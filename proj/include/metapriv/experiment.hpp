#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metapriv/attack.hpp"

namespace metapriv {

// Resolved description of one harness run. Serialized as sorted key=value
// lines next to the outputs; parse(emit(spec)) is exact, doubles included.
struct ExperimentSpec {
    std::string command = "attack-eval";
    std::string dataset = "synthetic";  // synthetic | mnist
    std::string images_path;            // mnist only; empty = $METAPRIV_DATA_DIR
    std::string labels_path;
    std::vector<int> ways = {3};
    std::vector<int> shots = {1};
    TrainConfig train;
    AttackConfig attack;
    TargetSet target = TargetSet::Query;
    std::vector<std::string> sites = {"support_data", "adaptation_gradient", "query_data", "validation_gradient"};
    std::vector<double> sigmas = {0.0, 0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0};
    double mu = 0.0;
    int trials = 40;
    int calibration_trials = 40;
    int meta_test_tasks = 40;
    std::vector<int> bench_iterations = {50, 100, 200};
    std::vector<int> bench_sizes = {3};
    int bench_reps = 5;
    std::uint64_t seed = 1;
    std::string outdir = "out";
    std::string checkpoint;  // start attack-eval from a saved state

    void validate() const;
};

std::string emit_spec(const ExperimentSpec& spec);
ExperimentSpec parse_spec(const std::string& text);

// One row of the fixed-layout result table. wall_seconds is only measured for
// bench rows; every other command records 0 so identical runs are identical
// byte for byte.
struct ResultRow {
    std::string experiment;
    std::string dataset;
    int ways = 0;
    int shots = 0;
    int epoch = 0;
    std::string target_set = "none";
    std::string site = "none";
    double mu = 0.0;
    double sigma = 0.0;
    int n = 0;
    double accuracy = 0.0;
    double recall = 0.0;
    double precision = 0.0;
    double meta_test_accuracy = 0.0;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
};

std::string csv_header();
std::string csv_line(const ResultRow& row);
void emit_csv(const std::vector<ResultRow>& rows, const std::string& path);
std::vector<ResultRow> parse_csv(const std::string& path);

// 17 significant digits; round-trips every finite double exactly.
std::string format_double(double v);

struct PlotSeries {
    std::string name;
    std::vector<double> xs;
    std::vector<double> ys;
    std::string color = "#1f6feb";
};

struct PlotBand {
    double x_lo = 0.0;
    double x_hi = 0.0;
};

// Hand-emitted SVG line chart: axes, ticks, legend, one polyline per series,
// optional shaded vertical band. Output bytes depend only on the arguments.
std::string render_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                        const std::vector<PlotSeries>& series, const PlotBand* band = nullptr);
void emit_plot(const std::string& path, const std::string& title, const std::string& xlabel, const std::string& ylabel,
               const std::vector<PlotSeries>& series, const PlotBand* band = nullptr);

// Calibrate-then-play evaluation of one experiment cell.
struct CellOutcome {
    double threshold = 0.0;
    GameRun game;
    double meta_test = 0.0;
};

CellOutcome evaluate_cell(const Dataset& data, const ParamVector& omega, const FewShotSpec& fs,
                          const TrainConfig& engine, const AttackConfig& atk, TargetSet target, const NoiseSpec& noise,
                          int trials, int calibration_trials, int meta_test_tasks, std::uint64_t seed);

Dataset load_dataset_for(const ExperimentSpec& spec);

// Qualifying noise levels: attack accuracy at or below atk_max while clean
// task learning stays within learn_drop of the noiseless baseline.
struct ConfidentArea {
    bool found = false;
    double sigma_lo = 0.0;
    double sigma_hi = 0.0;
    std::vector<double> qualifying;
};

ConfidentArea confident_noise_area(const std::vector<double>& sigmas, const std::vector<double>& attack_acc,
                                   const std::vector<double>& learn_acc, double atk_max = 0.6,
                                   double learn_drop = 0.10);

struct CommandResult {
    std::vector<ResultRow> rows;
    std::vector<std::string> files;  // everything written, outdir-relative
};

CommandResult run_experiment(const ExperimentSpec& spec);

}  // namespace metapriv
