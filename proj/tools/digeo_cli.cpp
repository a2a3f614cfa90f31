// digeo: frame construction, synthetic benchmark runs and report aggregation.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
// (divergence, non-convergence, or a frame that fails verification).

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include <digeo/config.hpp>
#include <digeo/etf_frame.hpp>
#include <digeo/frame_io.hpp>
#include <digeo/synth_bench.hpp>

namespace fs = std::filesystem;
using namespace digeo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

class usage_error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

void write_file(const fs::path& path, const std::string& contents)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw format_error("cannot open " + path.string() + " for writing");
    out << contents;
    if (!out) throw format_error("write failed: " + path.string());
}

template <class Writer>
void write_with(const fs::path& path, Writer&& writer)
{
    std::ostringstream out;
    writer(out);
    write_file(path, out.str());
}

void print_report(std::ostream& os, const FrameReport& r)
{
    os << "max_norm_deviation " << format_double(r.max_norm_deviation) << '\n'
       << "max_cosine_deviation " << format_double(r.max_cosine_deviation_from_equiangular) << '\n'
       << "is_etf " << (r.is_etf ? "true" : "false") << '\n';
}

// ---------------------------------------------------------------- etf

struct EtfOptions
{
    int classes = 0;
    int dim = 0;
    std::string mode = "closed";
    std::uint64_t seed = 0;
    std::string out;
    bool csv = false;
    double tolerance = 1e-8;
    std::string heatmap;
};

int cmd_etf(const EtfOptions& o)
{
    Frame<double> frame;
    bool ok = false;
    if (o.mode == "closed") {
        if (o.dim < o.classes - 1) {
            throw usage_error("closed form needs dim >= classes - 1 (got " + std::to_string(o.dim) + " < " +
                              std::to_string(o.classes - 1) + "); use --mode iterative for low dimensions");
        }
        frame = etf_closed_form<double>(o.classes, o.dim, o.seed);
    } else {
        IterativeConfig cfg;
        cfg.seed = o.seed;
        const auto r = frame_iterative<double>(o.classes, o.dim, cfg);
        frame = r.frame;
        ok = r.converged;
        std::cout << "converged " << (r.converged ? "true" : "false") << '\n'
                  << "iterations " << r.iterations << '\n'
                  << "objective " << format_double(r.objective) << '\n';
    }
    const FrameReport report = verify_frame(frame, o.tolerance);
    if (o.mode == "closed") ok = report.is_etf;
    print_report(std::cout, report);
    if (frame.num_classes() > 1) std::cout << "nearest_pair_cosine " << format_double(nearest_pair_cosine(frame)) << '\n';
    if (!o.out.empty()) save_frame(o.out, frame, o.csv);
    if (!o.heatmap.empty()) write_with(o.heatmap, [&](std::ostream& s) { write_matrix_csv(s, pairwise_cosine(frame)); });
    return ok ? kExitOk : kExitNumerical;
}

// ---------------------------------------------------------------- verify

int cmd_verify(const std::string& path, double tolerance)
{
    const Frame<double> frame = load_frame(path);
    std::cout << "classes " << frame.num_classes() << '\n' << "dim " << frame.dim() << '\n';
    const FrameReport report = verify_frame(frame, tolerance);
    print_report(std::cout, report);
    return report.is_etf ? kExitOk : kExitNumerical;
}

// ---------------------------------------------------------------- train

struct TrainOptions
{
    std::string config;
    std::vector<std::string> variants{"digeo"};
    std::vector<std::uint64_t> seeds{0};
    std::string out = "runs";
    std::vector<std::string> overrides;
    std::optional<double> rfs_threshold;
};

BenchConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides,
                           std::optional<double> rfs_threshold)
{
    BenchConfig config = path.empty() ? BenchConfig{} : load_bench_config(path);
    std::vector<std::string> all = overrides;
    if (rfs_threshold) {
        std::ostringstream s;
        s << "rfs_threshold=" << format_double(*rfs_threshold);
        all.push_back(s.str());
    }
    return all.empty() ? config : apply_overrides(config, all);
}

fs::path run_dir(const fs::path& root, const std::string& variant, std::uint64_t seed)
{
    return root / variant / ("seed_" + std::to_string(seed));
}

void write_stage_outputs(const fs::path& dir, const std::string& prefix, const HeadParams& head,
                         const MetricsReport& metrics, const SynthDataset& data, const std::string& variant,
                         std::uint64_t seed)
{
    write_with(dir / (prefix + "metrics.csv"), [&](std::ostream& s) { write_metrics_csv(s, metrics, variant, seed); });
    write_with(dir / (prefix + "heatmap.csv"), [&](std::ostream& s) { write_matrix_csv(s, metrics.weight_cosine); });
    write_with(dir / (prefix + "class_cosine.csv"), [&](std::ostream& s) { write_class_cosine_csv(s, metrics, data); });
    write_with(dir / (prefix + "margins.csv"), [&](std::ostream& s) { write_margins_csv(s, head.margins); });
    save_head(dir / (prefix + "head.bin"), head);
}

std::string headline(const std::string& variant, std::uint64_t seed, const MetricsReport& m)
{
    std::ostringstream s;
    s << variant << " seed " << seed << ": overall " << format_double(m.overall_accuracy) << " base "
      << format_double(m.base_accuracy) << " novel " << format_double(m.novel_accuracy);
    return s.str();
}

std::size_t worker_cap()
{
    std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("DIGEO_MAX_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) cap = static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            throw usage_error(std::string("DIGEO_MAX_THREADS must be a positive integer, got '") + env + "'");
        }
    }
    return cap;
}

/// Runs job(i) for i in [0, n) on up to worker_cap() threads. Exceptions are
/// collected per job and the first (by index) is rethrown.
template <class Job>
void parallel_for(std::size_t n, Job&& job)
{
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                job(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min(n, worker_cap());
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

int cmd_train(const TrainOptions& o)
{
    const BenchConfig config = resolve_config(o.config, o.overrides, o.rfs_threshold);
    std::vector<Variant> variants;
    for (const auto& name : o.variants) variants.push_back(parse_variant(name));

    struct Job
    {
        Variant variant;
        std::uint64_t seed;
        std::string summary;
    };
    std::vector<Job> jobs;
    for (const auto v : variants) {
        for (const auto s : o.seeds) jobs.push_back({v, s, {}});
    }
    const fs::path root(o.out);
    fs::create_directories(root);
    write_file(root / "config.json", to_json(config).dump(2) + "\n");

    parallel_for(jobs.size(), [&](std::size_t i) {
        Job& job = jobs[i];
        const std::string name = to_string(job.variant);
        TaskSpec task = config.task;
        task.seed = job.seed;
        const SynthDataset data = generate_task(task);
        const RunResult run = run_variant(config, data, job.variant, job.seed);
        const fs::path dir = run_dir(root, name, job.seed);
        fs::create_directories(dir);
        write_stage_outputs(dir, "", run.head, run.metrics, data, name, job.seed);
        if (run.teacher) write_stage_outputs(dir, "teacher_", *run.teacher, *run.teacher_metrics, data, name, job.seed);
        job.summary = headline(name, job.seed, run.metrics);
    });
    for (const auto& job : jobs) std::cout << job.summary << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------- distill

struct DistillOptions
{
    std::string teacher;
    std::string config;
    std::uint64_t seed = 0;
    std::string out = "distill";
    std::vector<std::string> overrides;
    std::optional<double> rfs_threshold;
};

int cmd_distill(const DistillOptions& o)
{
    const BenchConfig config = resolve_config(o.config, o.overrides, o.rfs_threshold);
    const HeadParams teacher = load_head(o.teacher);
    TaskSpec task = config.task;
    task.seed = o.seed;
    const SynthDataset data = generate_task(task);
    if (teacher.input_dim() != config.task.input_dim || teacher.num_foreground() != data.num_foreground()) {
        throw usage_error("teacher checkpoint does not match the configured task");
    }
    const StageResult student = train_distill_stage(teacher, data, distill_stage_config(config, o.seed));
    const fs::path dir(o.out);
    fs::create_directories(dir);
    write_stage_outputs(dir, "", student.head, student.metrics, data, "digeo", o.seed);
    std::cout << headline("digeo", o.seed, student.metrics) << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------- report

const std::vector<std::string> kReportMetrics{
    "overall_accuracy",    "base_accuracy",       "novel_accuracy",           "background_accuracy",
    "base_center_cosine", "novel_center_cosine", "background_center_cosine", "final_train_loss"};

std::map<std::string, std::string> read_metrics(const fs::path& path)
{
    std::ifstream in(path);
    std::string line;
    if (!std::getline(in, line) || line != "metric,value") throw format_error(path.string() + ": not a metrics file");
    std::map<std::string, std::string> values;
    while (std::getline(in, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw format_error(path.string() + ": malformed row '" + line + "'");
        values[line.substr(0, comma)] = line.substr(comma + 1);
    }
    return values;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out)
{
    // variant -> one metric map per metrics file, in sorted path order.
    std::map<std::string, std::vector<std::map<std::string, double>>> runs;
    for (const auto& d : dirs) {
        if (!fs::exists(d)) {
            std::cerr << "warning: " << d << " does not exist\n";
            continue;
        }
        std::vector<fs::path> files;
        if (fs::is_regular_file(d)) {
            files.push_back(d);
        } else {
            for (const auto& entry : fs::recursive_directory_iterator(d)) {
                if (entry.is_regular_file() && entry.path().filename() == "metrics.csv") files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            try {
                const auto values = read_metrics(f);
                std::map<std::string, double> row;
                for (const auto& key : kReportMetrics) row[key] = std::stod(values.at(key));
                runs[values.at("variant")].push_back(std::move(row));
            } catch (const std::exception& e) {
                std::cerr << "warning: skipping " << f.string() << ": " << e.what() << '\n';
            }
        }
    }
    if (runs.empty()) throw usage_error("report: no valid runs found");

    std::ostringstream table;
    table << "variant,runs";
    for (const auto& key : kReportMetrics) table << ',' << key << "_mean," << key << "_std";
    table << '\n';
    for (const auto v : all_variants()) {
        const std::string name = to_string(v);
        const auto it = runs.find(name);
        if (it == runs.end()) {
            table << name << ",0";
            for (std::size_t k = 0; k < kReportMetrics.size(); ++k) table << ",absent,absent";
            table << '\n';
            std::cout << name << ": absent\n";
            continue;
        }
        const auto& rows = it->second;
        const auto n = static_cast<double>(rows.size());
        table << name << ',' << rows.size();
        std::cout << name << " (" << rows.size() << " runs):";
        for (const auto& key : kReportMetrics) {
            double mean = 0;
            for (const auto& values : rows) mean += values.at(key);
            mean /= n;
            double var = 0;
            for (const auto& values : rows) var += (values.at(key) - mean) * (values.at(key) - mean);
            const double std_dev = std::sqrt(var / n);
            table << ',' << format_double(mean) << ',' << format_double(std_dev);
            if (key.find("accuracy") != std::string::npos) {
                std::cout << ' ' << key.substr(0, key.find('_')) << ' ' << format_double(mean) << " +- "
                          << format_double(std_dev);
            }
        }
        table << '\n';
        std::cout << '\n';
    }
    for (const auto& [name, rows] : runs) {
        const bool known = std::any_of(all_variants().begin(), all_variants().end(),
                                       [&](Variant v) { return to_string(v) == name; });
        if (!known) std::cerr << "warning: ignoring unknown variant '" << name << "'\n";
    }
    if (out.empty()) {
        std::cout << table.str();
    } else {
        if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
        write_file(out, table.str());
    }
    return kExitOk;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text)
{
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (item.empty() || used != item.size() || item[0] == '-') throw usage_error("invalid seed '" + item + "'");
        seeds.push_back(v);
    }
    if (seeds.empty()) throw usage_error("--seeds needs at least one seed");
    return seeds;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Fixed simplex ETF classifiers with prior margins on a synthetic long-tailed benchmark"};
    app.require_subcommand(1);

    EtfOptions etf;
    auto* etf_cmd = app.add_subcommand("etf", "construct and verify a simplex ETF frame");
    etf_cmd->add_option("--classes", etf.classes, "number of frame vectors N")->required()->check(CLI::Range(1, 1 << 20));
    etf_cmd->add_option("--dim", etf.dim, "ambient dimension d")->required()->check(CLI::Range(1, 1 << 20));
    etf_cmd->add_option("--mode", etf.mode, "closed or iterative")->check(CLI::IsMember({"closed", "iterative"}))->capture_default_str();
    etf_cmd->add_option("--seed", etf.seed, "rotation / initialization seed")->capture_default_str();
    etf_cmd->add_option("--out", etf.out, "frame output path");
    etf_cmd->add_flag("--csv", etf.csv, "write the frame as CSV instead of binary");
    etf_cmd->add_option("--tol", etf.tolerance, "verification tolerance")->capture_default_str();
    etf_cmd->add_option("--heatmap", etf.heatmap, "pairwise cosine CSV output path");

    std::string verify_path;
    double verify_tol = 1e-8;
    auto* verify_cmd = app.add_subcommand("verify", "check a frame file for the ETF property");
    verify_cmd->add_option("frame", verify_path, "frame file (binary or CSV)")->required()->check(CLI::ExistingFile);
    verify_cmd->add_option("--tol", verify_tol, "verification tolerance")->capture_default_str();

    TrainOptions train;
    std::string train_seeds;
    double train_rfs = kRfsThreshold;
    auto* train_cmd = app.add_subcommand("train", "run benchmark variants on the synthetic task");
    train_cmd->add_option("--config", train.config, "JSON config file")->check(CLI::ExistingFile);
    train_cmd->add_option("--variant", train.variants, "ce-full, ce-balanced, etf, etf-margin, etf-margin-rfs, digeo")
        ->check(CLI::IsMember({"ce-full", "ce-balanced", "etf", "etf-margin", "etf-margin-rfs", "digeo"}))
        ->capture_default_str();
    train_cmd->add_option("--seed", train.seeds, "task and training seed")->excludes(
        train_cmd->add_option("--seeds", train_seeds, "comma-separated seeds, run concurrently"));
    train_cmd->add_option("--out", train.out, "output root directory")->capture_default_str();
    train_cmd->add_option("--set", train.overrides, "dotted key=value config override");
    auto* train_rfs_opt = train_cmd->add_option("--rfs-threshold", train_rfs, "RFS threshold")->capture_default_str();

    DistillOptions distill;
    double distill_rfs = kRfsThreshold;
    auto* distill_cmd = app.add_subcommand("distill", "resume distillation from a fix-stage checkpoint");
    distill_cmd->add_option("--teacher", distill.teacher, "fix-stage head checkpoint")->required()->check(CLI::ExistingFile);
    distill_cmd->add_option("--config", distill.config, "JSON config file")->check(CLI::ExistingFile);
    distill_cmd->add_option("--seed", distill.seed, "task and training seed")->capture_default_str();
    distill_cmd->add_option("--out", distill.out, "output directory")->capture_default_str();
    distill_cmd->add_option("--set", distill.overrides, "dotted key=value config override");
    auto* distill_rfs_opt = distill_cmd->add_option("--rfs-threshold", distill_rfs, "RFS threshold")->capture_default_str();

    std::vector<std::string> report_dirs;
    std::string report_out;
    auto* report_cmd = app.add_subcommand("report", "aggregate metrics over runs (mean and std per variant)");
    report_cmd->add_option("runs", report_dirs, "run directories or metrics files")->required();
    report_cmd->add_option("--out", report_out, "table CSV path (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (etf_cmd->parsed()) return cmd_etf(etf);
        if (verify_cmd->parsed()) return cmd_verify(verify_path, verify_tol);
        if (train_cmd->parsed()) {
            if (!train_seeds.empty()) train.seeds = parse_seed_list(train_seeds);
            if (train_rfs_opt->count() > 0) train.rfs_threshold = train_rfs;
            return cmd_train(train);
        }
        if (distill_cmd->parsed()) {
            if (distill_rfs_opt->count() > 0) distill.rfs_threshold = distill_rfs;
            return cmd_distill(distill);
        }
        if (report_cmd->parsed()) return cmd_report(report_dirs, report_out);
    } catch (const numerical_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}
