#include "metapriv/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "metapriv/collision.hpp"

namespace metapriv {

namespace {

const std::vector<std::string> kCommands = {"train",       "attack-eval", "sweep-ways",  "sweep-shots",
                                            "sweep-epochs", "bench",       "noise-sweep", "verify-theory"};

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(v[i]);
    }
    return s;
}

std::string join_doubles(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += format_double(v[i]);
    }
    return s;
}

std::string join_strings(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += v[i];
    }
    return s;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::vector<int> parse_ints(const std::string& s) {
    std::vector<int> out;
    for (const auto& t : split_list(s)) out.push_back(std::stoi(t));
    return out;
}

std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    for (const auto& t : split_list(s)) out.push_back(std::strtod(t.c_str(), nullptr));
    return out;
}

}  // namespace

void ExperimentSpec::validate() const {
    if (std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end())
        throw std::invalid_argument("unknown command: " + command);
    if (dataset != "synthetic" && dataset != "mnist") throw std::invalid_argument("unknown dataset: " + dataset);
    if (ways.empty() || shots.empty()) throw std::invalid_argument("ways and shots must be non-empty");
    for (int w : ways)
        if (w < 2) throw std::invalid_argument("ways must be at least 2");
    for (int s : shots)
        if (s < 1) throw std::invalid_argument("shots must be at least 1");
    if (trials < 0 || trials % 2 != 0) throw std::invalid_argument("trials must be even and non-negative");
    if (calibration_trials <= 0 || calibration_trials % 2 != 0)
        throw std::invalid_argument("calibration_trials must be even and positive");
    if (meta_test_tasks < 1) throw std::invalid_argument("meta_test_tasks must be positive");
    if (bench_reps < 1) throw std::invalid_argument("bench_reps must be positive");
    for (double s : sigmas)
        if (s < 0.0) throw std::invalid_argument("sigma grid entries must be non-negative");
    for (const auto& s : sites) noise_site_from_name(s);
    train.validate();
    attack.validate();
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string emit_spec(const ExperimentSpec& s) {
    std::ostringstream os;
    os << "attack_batch_slots=" << s.attack.batch_slots << '\n';
    os << "attack_iterations=" << s.attack.iterations << '\n';
    os << "attack_step_size=" << format_double(s.attack.step_size) << '\n';
    os << "attack_threshold=" << format_double(s.attack.threshold) << '\n';
    os << "attack_tv_weight=" << format_double(s.attack.tv_weight) << '\n';
    os << "bench_iterations=" << join_ints(s.bench_iterations) << '\n';
    os << "bench_reps=" << s.bench_reps << '\n';
    os << "bench_sizes=" << join_ints(s.bench_sizes) << '\n';
    os << "calibration_trials=" << s.calibration_trials << '\n';
    os << "checkpoint=" << s.checkpoint << '\n';
    os << "command=" << s.command << '\n';
    os << "dataset=" << s.dataset << '\n';
    os << "images=" << s.images_path << '\n';
    os << "labels=" << s.labels_path << '\n';
    os << "meta_test_tasks=" << s.meta_test_tasks << '\n';
    os << "mu=" << format_double(s.mu) << '\n';
    os << "outdir=" << s.outdir << '\n';
    os << "seed=" << s.seed << '\n';
    os << "shots=" << join_ints(s.shots) << '\n';
    os << "sigmas=" << join_doubles(s.sigmas) << '\n';
    os << "sites=" << join_strings(s.sites) << '\n';
    os << "target=" << target_set_name(s.target) << '\n';
    os << "train_alpha_inner=" << format_double(s.train.alpha_inner) << '\n';
    os << "train_beta_meta=" << format_double(s.train.beta_meta) << '\n';
    os << "train_epochs=" << s.train.epochs << '\n';
    os << "train_inner_steps=" << s.train.inner_steps << '\n';
    os << "train_meta_steps_per_epoch=" << s.train.meta_steps_per_epoch << '\n';
    os << "train_order=" << (s.train.order == GradOrder::Second ? "second" : "first") << '\n';
    os << "train_tasks_per_step=" << s.train.tasks_per_step << '\n';
    os << "trials=" << s.trials << '\n';
    os << "ways=" << join_ints(s.ways) << '\n';
    return os.str();
}

ExperimentSpec parse_spec(const std::string& text) {
    ExperimentSpec s;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("spec line without '=': " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "attack_batch_slots") s.attack.batch_slots = std::stoi(val);
        else if (key == "attack_iterations") s.attack.iterations = std::stoi(val);
        else if (key == "attack_step_size") s.attack.step_size = std::strtod(val.c_str(), nullptr);
        else if (key == "attack_threshold") s.attack.threshold = std::strtod(val.c_str(), nullptr);
        else if (key == "attack_tv_weight") s.attack.tv_weight = std::strtod(val.c_str(), nullptr);
        else if (key == "bench_iterations") s.bench_iterations = parse_ints(val);
        else if (key == "bench_reps") s.bench_reps = std::stoi(val);
        else if (key == "bench_sizes") s.bench_sizes = parse_ints(val);
        else if (key == "calibration_trials") s.calibration_trials = std::stoi(val);
        else if (key == "checkpoint") s.checkpoint = val;
        else if (key == "command") s.command = val;
        else if (key == "dataset") s.dataset = val;
        else if (key == "images") s.images_path = val;
        else if (key == "labels") s.labels_path = val;
        else if (key == "meta_test_tasks") s.meta_test_tasks = std::stoi(val);
        else if (key == "mu") s.mu = std::strtod(val.c_str(), nullptr);
        else if (key == "outdir") s.outdir = val;
        else if (key == "seed") s.seed = std::stoull(val);
        else if (key == "shots") s.shots = parse_ints(val);
        else if (key == "sigmas") s.sigmas = parse_doubles(val);
        else if (key == "sites") s.sites = split_list(val);
        else if (key == "target") s.target = val == "support" ? TargetSet::Support : TargetSet::Query;
        else if (key == "train_alpha_inner") s.train.alpha_inner = std::strtod(val.c_str(), nullptr);
        else if (key == "train_beta_meta") s.train.beta_meta = std::strtod(val.c_str(), nullptr);
        else if (key == "train_epochs") s.train.epochs = std::stoi(val);
        else if (key == "train_inner_steps") s.train.inner_steps = std::stoi(val);
        else if (key == "train_meta_steps_per_epoch") s.train.meta_steps_per_epoch = std::stoi(val);
        else if (key == "train_order") s.train.order = val == "first" ? GradOrder::First : GradOrder::Second;
        else if (key == "train_tasks_per_step") s.train.tasks_per_step = std::stoi(val);
        else if (key == "trials") s.trials = std::stoi(val);
        else if (key == "ways") s.ways = parse_ints(val);
        else throw std::invalid_argument("unknown spec key: " + key);
    }
    return s;
}

std::string csv_header() {
    return "experiment,dataset,ways,shots,epoch,target_set,site,mu,sigma,n,accuracy,recall,precision,"
           "meta_test_accuracy,wall_seconds,seed";
}

std::string csv_line(const ResultRow& r) {
    std::ostringstream os;
    os << r.experiment << ',' << r.dataset << ',' << r.ways << ',' << r.shots << ',' << r.epoch << ',' << r.target_set
       << ',' << r.site << ',' << format_double(r.mu) << ',' << format_double(r.sigma) << ',' << r.n << ','
       << format_double(r.accuracy) << ',' << format_double(r.recall) << ',' << format_double(r.precision) << ','
       << format_double(r.meta_test_accuracy) << ',' << format_double(r.wall_seconds) << ',' << r.seed;
    return os.str();
}

void emit_csv(const std::vector<ResultRow>& rows, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << csv_header() << '\n';
    for (const auto& r : rows) os << csv_line(r) << '\n';
}

std::vector<ResultRow> parse_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line) || line != csv_header()) throw std::runtime_error("unexpected CSV header in " + path);
    std::vector<ResultRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = split_list(line);
        if (f.size() != 16) throw std::runtime_error("malformed CSV row in " + path);
        ResultRow r;
        r.experiment = f[0];
        r.dataset = f[1];
        r.ways = std::stoi(f[2]);
        r.shots = std::stoi(f[3]);
        r.epoch = std::stoi(f[4]);
        r.target_set = f[5];
        r.site = f[6];
        r.mu = std::strtod(f[7].c_str(), nullptr);
        r.sigma = std::strtod(f[8].c_str(), nullptr);
        r.n = std::stoi(f[9]);
        r.accuracy = std::strtod(f[10].c_str(), nullptr);
        r.recall = std::strtod(f[11].c_str(), nullptr);
        r.precision = std::strtod(f[12].c_str(), nullptr);
        r.meta_test_accuracy = std::strtod(f[13].c_str(), nullptr);
        r.wall_seconds = std::strtod(f[14].c_str(), nullptr);
        r.seed = std::stoull(f[15]);
        rows.push_back(std::move(r));
    }
    return rows;
}

namespace {

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

}  // namespace

std::string render_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                        const std::vector<PlotSeries>& series, const PlotBand* band) {
    if (series.empty()) throw std::invalid_argument("plot: no series");
    for (const auto& s : series) {
        if (s.xs.empty()) throw std::invalid_argument("plot: empty series: " + s.name);
        if (s.xs.size() != s.ys.size()) throw std::invalid_argument("plot: xs/ys length mismatch: " + s.name);
    }
    const double W = 640, H = 420, L = 70, R = 20, T = 40, B = 50;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.xs.size(); ++i) {
            if (first) {
                xmin = xmax = s.xs[i];
                ymin = ymax = s.ys[i];
                first = false;
            }
            xmin = std::min(xmin, s.xs[i]);
            xmax = std::max(xmax, s.xs[i]);
            ymin = std::min(ymin, s.ys[i]);
            ymax = std::max(ymax, s.ys[i]);
        }
    if (xmax - xmin < 1e-12) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (ymax - ymin < 1e-12) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;
    const auto sx = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    const auto sy = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
       << ' ' << H << "\">\n";
    os << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"#ffffff\"/>\n";
    if (band && band->x_hi >= band->x_lo) {
        const double bx0 = std::max(sx(band->x_lo), L), bx1 = std::min(sx(band->x_hi), W - R);
        if (bx1 > bx0)
            os << "<rect x=\"" << fmt2(bx0) << "\" y=\"" << fmt2(T) << "\" width=\"" << fmt2(bx1 - bx0)
               << "\" height=\"" << fmt2(H - T - B) << "\" fill=\"#b7e3b0\" fill-opacity=\"0.45\"/>\n";
    }
    os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
       << "\" stroke=\"#222222\" stroke-width=\"1\"/>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
       << "\" stroke=\"#222222\" stroke-width=\"1\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double fx = xmin + (xmax - xmin) * t / 4.0;
        const double fy = ymin + (ymax - ymin) * t / 4.0;
        os << "<line x1=\"" << fmt2(sx(fx)) << "\" y1=\"" << H - B << "\" x2=\"" << fmt2(sx(fx)) << "\" y2=\""
           << H - B + 5 << "\" stroke=\"#222222\"/>\n";
        os << "<text x=\"" << fmt2(sx(fx)) << "\" y=\"" << H - B + 18
           << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << fmt_tick(fx) << "</text>\n";
        os << "<line x1=\"" << L - 5 << "\" y1=\"" << fmt2(sy(fy)) << "\" x2=\"" << L << "\" y2=\"" << fmt2(sy(fy))
           << "\" stroke=\"#222222\"/>\n";
        os << "<text x=\"" << L - 8 << "\" y=\"" << fmt2(sy(fy) + 4)
           << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << fmt_tick(fy) << "</text>\n";
    }
    os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << T - 14
       << "\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">" << title << "</text>\n";
    os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
       << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">" << xlabel << "</text>\n";
    os << "<text x=\"16\" y=\"" << (T + H - B) / 2
       << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
       << (T + H - B) / 2 << ")\">" << ylabel << "</text>\n";
    for (const auto& s : series) {
        os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.xs.size(); ++i) {
            if (i) os << ' ';
            os << fmt2(sx(s.xs[i])) << ',' << fmt2(sy(s.ys[i]));
        }
        os << "\"/>\n";
        for (std::size_t i = 0; i < s.xs.size(); ++i)
            os << "<circle cx=\"" << fmt2(sx(s.xs[i])) << "\" cy=\"" << fmt2(sy(s.ys[i])) << "\" r=\"3\" fill=\""
               << s.color << "\"/>\n";
    }
    double ly = T + 8;
    for (const auto& s : series) {
        os << "<line x1=\"" << W - R - 150 << "\" y1=\"" << fmt2(ly) << "\" x2=\"" << W - R - 126 << "\" y2=\""
           << fmt2(ly) << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << W - R - 120 << "\" y=\"" << fmt2(ly + 4)
           << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.name << "</text>\n";
        ly += 16;
    }
    os << "</svg>\n";
    return os.str();
}

void emit_plot(const std::string& path, const std::string& title, const std::string& xlabel, const std::string& ylabel,
               const std::vector<PlotSeries>& series, const PlotBand* band) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << render_plot(title, xlabel, ylabel, series, band);
}

CellOutcome evaluate_cell(const Dataset& data, const ParamVector& omega, const FewShotSpec& fs,
                          const TrainConfig& engine, const AttackConfig& atk, TargetSet target, const NoiseSpec& noise,
                          int trials, int calibration_trials, int meta_test_tasks, std::uint64_t seed) {
    GameSetup setup;
    setup.omega = omega;
    setup.data = &data;
    setup.spec = fs;
    setup.engine = engine;
    setup.attack = atk;
    setup.noise = noise;
    setup.target = target;
    setup.seed = seed;

    std::vector<double> mem, non;
    collect_scores(setup, calibration_trials, mem, non);
    CellOutcome out;
    out.threshold = calibrate_threshold(mem, non);
    setup.attack.threshold = out.threshold;
    out.game = run_mi_game(setup, trials);
    out.meta_test = meta_test_accuracy(omega, data, fs, engine.alpha_inner, engine.inner_steps, meta_test_tasks,
                                       derive_seed(seed, 0x3e7a));
    return out;
}

Dataset load_dataset_for(const ExperimentSpec& spec) {
    if (spec.dataset == "synthetic") return synth_dataset(10, 200, 777);
    std::string images = spec.images_path, labels = spec.labels_path;
    if (images.empty() || labels.empty()) {
        const char* dir = std::getenv("METAPRIV_DATA_DIR");
        if (dir == nullptr)
            throw std::runtime_error("mnist dataset requested but no image/label paths given and METAPRIV_DATA_DIR unset");
        if (images.empty()) images = std::string(dir) + "/mnist-images.idx";
        if (labels.empty()) labels = std::string(dir) + "/mnist-labels.idx";
    }
    Dataset d = load_idx(images, labels);
    d.name = "mnist";
    return d;
}

ConfidentArea confident_noise_area(const std::vector<double>& sigmas, const std::vector<double>& attack_acc,
                                   const std::vector<double>& learn_acc, double atk_max, double learn_drop) {
    if (sigmas.size() != attack_acc.size() || sigmas.size() != learn_acc.size())
        throw std::invalid_argument("confident_noise_area: length mismatch");
    const auto z = std::find(sigmas.begin(), sigmas.end(), 0.0);
    if (z == sigmas.end()) throw std::invalid_argument("confident_noise_area: sigma grid must include 0");
    const double baseline = learn_acc[static_cast<std::size_t>(z - sigmas.begin())];
    ConfidentArea area;
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        if (attack_acc[i] <= atk_max && learn_acc[i] >= baseline - learn_drop) {
            area.qualifying.push_back(sigmas[i]);
            if (!area.found) {
                area.found = true;
                area.sigma_lo = area.sigma_hi = sigmas[i];
            } else {
                area.sigma_lo = std::min(area.sigma_lo, sigmas[i]);
                area.sigma_hi = std::max(area.sigma_hi, sigmas[i]);
            }
        }
    }
    return area;
}

namespace {

namespace fs = std::filesystem;

ResultRow base_row(const ExperimentSpec& spec, const Dataset& data) {
    ResultRow r;
    r.experiment = spec.command;
    r.dataset = data.name;
    r.seed = spec.seed;
    return r;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << text;
}

void write_trial_transcript(const std::string& path, const GameRun& run) {
    std::ostringstream os;
    os << "trial,member_truth,learner,guessed_learner,score,decided_member,correct\n";
    for (const auto& t : run.trials)
        os << t.trial << ',' << (t.member_truth ? 1 : 0) << ',' << t.learner << ',' << t.guessed_learner << ','
           << format_double(t.score) << ',' << (t.decided_member ? 1 : 0) << ',' << (t.correct ? 1 : 0) << '\n';
    write_text(path, os.str());
}

ParamVector omega_for(const ExperimentSpec& spec, int ways, int* epoch_out) {
    if (!spec.checkpoint.empty()) {
        Checkpoint ck = load_checkpoint(spec.checkpoint);
        if (arch_of(ck.params).num_classes != ways)
            throw std::invalid_argument("checkpoint class count does not match requested ways");
        if (epoch_out) *epoch_out = ck.epoch;
        return ck.params;
    }
    if (epoch_out) *epoch_out = 0;
    return init_params(Architecture{784, {64}, ways}, derive_seed(spec.seed, 0xe0, static_cast<std::uint64_t>(ways)));
}

void cmd_train(const ExperimentSpec& spec, const Dataset& data, CommandResult& out) {
    const int w = spec.ways[0], s = spec.shots[0];
    const Architecture arch{784, {64}, w};
    const TrainResult tr = train_run(arch, spec.train, data, {w, s}, spec.seed);
    for (std::size_t e = 0; e < tr.checkpoints.size(); ++e) {
        const std::string name = "ckpt_epoch_" + std::to_string(e) + ".bin";
        save_checkpoint((fs::path(spec.outdir) / name).string(), tr.checkpoints[e], static_cast<int>(e),
                        static_cast<std::int64_t>(e) * spec.train.meta_steps_per_epoch);
        out.files.push_back(name);
        ResultRow r = base_row(spec, data);
        r.ways = w;
        r.shots = s;
        r.epoch = static_cast<int>(e);
        r.n = spec.meta_test_tasks;
        r.meta_test_accuracy = meta_test_accuracy(tr.checkpoints[e], data, {w, s}, spec.train.alpha_inner,
                                                  spec.train.inner_steps, spec.meta_test_tasks,
                                                  derive_seed(spec.seed, 0x3e7a, e));
        out.rows.push_back(std::move(r));
    }
}

ResultRow cell_row(const ExperimentSpec& spec, const Dataset& data, int w, int s, int epoch, TargetSet target,
                   const NoiseSpec& noise, const CellOutcome& cell) {
    ResultRow r = base_row(spec, data);
    r.ways = w;
    r.shots = s;
    r.epoch = epoch;
    r.target_set = target_set_name(target);
    r.site = noise_site_name(noise.site);
    r.mu = noise.mu;
    r.sigma = noise.sigma;
    r.n = cell.game.result.n;
    r.accuracy = cell.game.result.accuracy;
    r.recall = cell.game.result.recall;
    r.precision = cell.game.result.precision;
    r.meta_test_accuracy = cell.meta_test;
    return r;
}

void cmd_attack_eval(const ExperimentSpec& spec, const Dataset& data, CommandResult& out) {
    for (int w : spec.ways)
        for (int s : spec.shots) {
            int epoch = 0;
            const ParamVector omega = omega_for(spec, w, &epoch);
            const CellOutcome cell = evaluate_cell(
                data, omega, {w, s}, spec.train, spec.attack, spec.target, {}, spec.trials, spec.calibration_trials,
                spec.meta_test_tasks, derive_seed(spec.seed, static_cast<std::uint64_t>(w), static_cast<std::uint64_t>(s)));
            out.rows.push_back(cell_row(spec, data, w, s, epoch, spec.target, {}, cell));
            const std::string name = std::string("trials_") + target_set_name(spec.target) + "_w" + std::to_string(w) +
                                     "s" + std::to_string(s) + ".csv";
            write_trial_transcript((fs::path(spec.outdir) / name).string(), cell.game);
            out.files.push_back(name);
        }
}

void sweep_plot(const ExperimentSpec& spec, const CommandResult& out, const std::string& name, const std::string& xlabel,
                int ResultRow::*xfield, CommandResult& res) {
    std::vector<PlotSeries> series;
    for (const std::string target : {"query", "support"}) {
        PlotSeries ps;
        ps.name = target + " attack";
        ps.color = target == "query" ? "#1f6feb" : "#d73a49";
        for (const auto& r : out.rows)
            if (r.target_set == target) {
                ps.xs.push_back(static_cast<double>(r.*xfield));
                ps.ys.push_back(r.accuracy);
            }
        if (!ps.xs.empty()) series.push_back(std::move(ps));
    }
    emit_plot((fs::path(spec.outdir) / name).string(), "Membership attack accuracy", xlabel, "attack accuracy", series);
    res.files.push_back(name);
}

void cmd_sweep_shots(const ExperimentSpec& spec, const Dataset& data, CommandResult& out) {
    const int w = spec.ways[0];
    for (const TargetSet target : {TargetSet::Query, TargetSet::Support})
        for (int s : spec.shots) {
            const ParamVector omega = omega_for(spec, w, nullptr);
            const CellOutcome cell = evaluate_cell(
                data, omega, {w, s}, spec.train, spec.attack, target, {}, spec.trials, spec.calibration_trials,
                spec.meta_test_tasks, derive_seed(spec.seed, static_cast<std::uint64_t>(w), static_cast<std::uint64_t>(s)));
            out.rows.push_back(cell_row(spec, data, w, s, 0, target, {}, cell));
        }
    sweep_plot(spec, out, "plot_shots.svg", "shots per class", &ResultRow::shots, out);
}

void cmd_sweep_ways(const ExperimentSpec& spec, const Dataset& data, CommandResult& out) {
    const int s = spec.shots[0];
    for (const TargetSet target : {TargetSet::Query, TargetSet::Support})
        for (int w : spec.ways) {
            const ParamVector omega = omega_for(spec, w, nullptr);
            const CellOutcome cell = evaluate_cell(
                data, omega, {w, s}, spec.train, spec.attack, target, {}, spec.trials, spec.calibration_trials,
                spec.meta_test_tasks, derive_seed(spec.seed, static_cast<std::uint64_t>(w), static_cast<std::uint64_t>(s)));
            out.rows.push_back(cell_row(spec, data, w, s, 0, target, {}, cell));
        }
    sweep_plot(spec, out, "plot_ways.svg", "ways (classes per task)", &ResultRow::ways, out);
}

void cmd_sweep_epochs(const ExperimentSpec& spec, const Dataset& data, CommandResult& out) {
    const int w = spec.ways[0], s = spec.shots[0];
    const Architecture arch{784, {64}, w};
    const TrainResult tr = train_run(arch, spec.train, data, {w, s}, spec.seed);
    for (const TargetSet target : {TargetSet::Query, TargetSet::Support})
        for (std::size_t e = 0; e < tr.checkpoints.size(); ++e) {
            const CellOutcome cell =
                evaluate_cell(data, tr.checkpoints[e], {w, s}, spec.train, spec.attack, target, {}, spec.trials,
                              spec.calibration_trials, spec.meta_test_tasks, derive_seed(spec.seed, e));
            out.rows.push_back(cell_row(spec, data, w, s, static_cast<int>(e), target, {}, cell));
        }
    sweep_plot(spec, out, "plot_epochs.svg", "training epoch", &ResultRow::epoch, out);
}

void cmd_bench(const ExperimentSpec& spec, const Dataset& data, CommandResult& out) {
    for (const TargetSet target : {TargetSet::Query, TargetSet::Support})
        for (int size : spec.bench_sizes)
            for (int iters : spec.bench_iterations) {
                Rng rng(derive_seed(spec.seed, 0xbe, static_cast<std::uint64_t>(size)));
                const TaskBatch task = sample_task(data, {size, 1}, rng);
                const ParamVector omega =
                    init_params(Architecture{784, {64}, size}, derive_seed(spec.seed, 0xe0, static_cast<std::uint64_t>(size)));
                TrainConfig engine = spec.train;
                const GradientVector g = undefended_task_grad(task, omega, engine).g;
                AttackConfig cfg = spec.attack;
                cfg.iterations = iters;
                const int prior_id = target == TargetSet::Query ? task.query_ids[0] : task.support_ids[0];
                const Tensor prior = data.examples[static_cast<std::size_t>(prior_id)].pixels;
                std::vector<double> times;
                for (int rep = 0; rep < spec.bench_reps; ++rep) {
                    cfg.seed = derive_seed(spec.seed, 0xbadc, static_cast<std::uint64_t>(rep));
                    const auto t0 = std::chrono::steady_clock::now();
                    if (target == TargetSet::Query)
                        reconstruct_query(g, omega, prior, task.query.labels, 0, cfg);
                    else
                        reconstruct_support(g, omega, task.query, prior, task.support.labels, 0, engine.alpha_inner, cfg);
                    const auto t1 = std::chrono::steady_clock::now();
                    times.push_back(std::chrono::duration<double>(t1 - t0).count());
                }
                std::sort(times.begin(), times.end());
                ResultRow r = base_row(spec, data);
                r.ways = size;
                r.shots = 1;
                r.epoch = iters;  // bench keys rows by iteration count
                r.target_set = target_set_name(target);
                r.n = spec.bench_reps;
                r.wall_seconds = times[times.size() / 2];
                out.rows.push_back(std::move(r));
            }
}

void cmd_noise_sweep(const ExperimentSpec& spec, const Dataset& data, CommandResult& out) {
    const int w = spec.ways[0], s = spec.shots[0];
    const Architecture arch{784, {64}, w};
    std::ostringstream flags;
    for (const std::string& site_name : spec.sites) {
        const NoiseSite site = noise_site_from_name(site_name);
        std::vector<double> atk_acc, learn_acc;
        for (double sigma : spec.sigmas) {
            const NoiseSpec noise{site, spec.mu, sigma};
            const ParamVector omega = omega_for(spec, w, nullptr);
            CellOutcome cell = evaluate_cell(data, omega, {w, s}, spec.train, spec.attack, spec.target, noise,
                                             spec.trials, spec.calibration_trials, spec.meta_test_tasks,
                                             derive_seed(spec.seed, static_cast<std::uint64_t>(site),
                                                         static_cast<std::uint64_t>(atk_acc.size())));
            const TrainResult tr =
                train_run(arch, spec.train, data, {w, s}, derive_seed(spec.seed, 0x7a11), make_noisy_task_fn(noise));
            cell.meta_test = meta_test_accuracy(tr.checkpoints.back(), data, {w, s}, spec.train.alpha_inner,
                                                spec.train.inner_steps, spec.meta_test_tasks,
                                                derive_seed(spec.seed, 0x3e7a));
            out.rows.push_back(cell_row(spec, data, w, s, 0, spec.target, noise, cell));
            atk_acc.push_back(cell.game.result.accuracy);
            learn_acc.push_back(cell.meta_test);
        }
        const ConfidentArea area = confident_noise_area(spec.sigmas, atk_acc, learn_acc);
        flags << "site=" << site_name << " target=" << target_set_name(spec.target) << " confident="
              << (area.found ? "yes" : "no");
        if (area.found)
            flags << " sigma_lo=" << format_double(area.sigma_lo) << " sigma_hi=" << format_double(area.sigma_hi);
        flags << '\n';

        std::vector<PlotSeries> series(2);
        series[0] = {"attack accuracy", {}, {}, "#d73a49"};
        series[1] = {"task learning accuracy", {}, {}, "#1f6feb"};
        PlotBand band;
        bool banded = false;
        for (std::size_t i = 0; i < spec.sigmas.size(); ++i) {
            series[0].xs.push_back(static_cast<double>(i));
            series[0].ys.push_back(atk_acc[i]);
            series[1].xs.push_back(static_cast<double>(i));
            series[1].ys.push_back(learn_acc[i]);
            if (area.found && spec.sigmas[i] >= area.sigma_lo && spec.sigmas[i] <= area.sigma_hi) {
                if (!banded) {
                    band.x_lo = static_cast<double>(i);
                    banded = true;
                }
                band.x_hi = static_cast<double>(i);
            }
        }
        const std::string name = "plot_noise_" + site_name + "_" + target_set_name(spec.target) + ".svg";
        emit_plot((fs::path(spec.outdir) / name).string(), "Noise at " + site_name, "noise level index",
                  "accuracy", series, banded ? &band : nullptr);
        out.files.push_back(name);
    }
    write_text((fs::path(spec.outdir) / "noise_flags.txt").string(), flags.str());
    out.files.push_back("noise_flags.txt");
}

void cmd_verify_theory(const ExperimentSpec& spec, CommandResult& out) {
    std::ostringstream report, csv;
    csv << "case,kind,ok,failure,det_pullback,g0,g1,query_x,query_y,replay_error,variant_gap\n";
    int okCount = 0;
    for (int i = 0; i < 10; ++i) {
        const CollisionCase c = random_admissible_case(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
        const CollisionReport rep = find_gradient_collision(c.omega, c.support, c.query, c.candidate_support, c.alpha);
        okCount += rep.ok;
        report << "case " << i << ": " << (rep.ok ? "collision constructed" : "failed") << ", shared gradient ("
               << format_double(rep.shared_gradient[0]) << ", " << format_double(rep.shared_gradient[1])
               << "), replay error " << format_double(rep.replay_error) << ", hessian variant gap "
               << format_double(rep.variant_gap) << '\n';
        csv << i << ",seeded," << rep.ok << ',' << collision_failure_name(rep.failure) << ','
            << format_double(rep.det_pullback) << ',' << format_double(rep.shared_gradient[0]) << ','
            << format_double(rep.shared_gradient[1]) << ',' << format_double(rep.constructed_query.x) << ','
            << format_double(rep.constructed_query.y) << ',' << format_double(rep.replay_error) << ','
            << format_double(rep.variant_gap) << '\n';
    }
    // Deliberately inadmissible: an active candidate at alpha = 1/(2(1+x^2))
    // makes the pullback singular.
    {
        const NeuronModel omega{0.5, 0.2};
        const CollisionReport rep =
            find_gradient_collision(omega, {0.6, 0.1}, {0.4, 0.2}, {1.0, 0.3}, 0.25);
        report << "singular candidate: failure=" << collision_failure_name(rep.failure)
               << " det=" << format_double(rep.det_pullback) << '\n';
        csv << "10,singular," << rep.ok << ',' << collision_failure_name(rep.failure) << ','
            << format_double(rep.det_pullback) << ",,,,,," << '\n';
    }
    report << "constructed " << okCount << "/10 seeded collisions\n";
    write_text((fs::path(spec.outdir) / "collision_report.txt").string(), report.str());
    write_text((fs::path(spec.outdir) / "collisions.csv").string(), csv.str());
    out.files.push_back("collision_report.txt");
    out.files.push_back("collisions.csv");
}

}  // namespace

CommandResult run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    fs::create_directories(spec.outdir);
    CommandResult out;
    write_text((fs::path(spec.outdir) / "spec.txt").string(), emit_spec(spec));
    out.files.push_back("spec.txt");

    if (spec.trials == 0) {
        emit_csv(out.rows, (fs::path(spec.outdir) / "results.csv").string());
        out.files.push_back("results.csv");
        return out;
    }

    if (spec.command == "verify-theory") {
        cmd_verify_theory(spec, out);
    } else {
        const Dataset data = load_dataset_for(spec);
        if (spec.command == "train") cmd_train(spec, data, out);
        else if (spec.command == "attack-eval") cmd_attack_eval(spec, data, out);
        else if (spec.command == "sweep-shots") cmd_sweep_shots(spec, data, out);
        else if (spec.command == "sweep-ways") cmd_sweep_ways(spec, data, out);
        else if (spec.command == "sweep-epochs") cmd_sweep_epochs(spec, data, out);
        else if (spec.command == "bench") cmd_bench(spec, data, out);
        else if (spec.command == "noise-sweep") cmd_noise_sweep(spec, data, out);
    }

    emit_csv(out.rows, (fs::path(spec.outdir) / "results.csv").string());
    out.files.push_back("results.csv");
    return out;
}

}  // namespace metapriv
