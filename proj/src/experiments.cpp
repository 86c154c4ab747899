#include "gfl/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "gfl/common.hpp"
#include "gfl/gradcheck.hpp"
#include "gfl/losses.hpp"
#include "gfl/minima.hpp"
#include "gfl/serialization.hpp"

#ifndef GFL_VERSION
#define GFL_VERSION "unknown"
#endif

namespace gfl {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string format_double(double v)
{
    if (std::isnan(v)) {
        return "nan";
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}   // namespace

Benchmark make_benchmark(const ExperimentConfig& config)
{
    Benchmark b;
    b.spec = config.scene_spec();
    std::vector<Scene> all = generate(b.spec, config.data.train_scenes + config.data.eval_scenes);
    const auto split = all.begin() + config.data.train_scenes;
    b.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(split));
    b.eval.assign(std::make_move_iterator(split), std::make_move_iterator(all.end()));
    return b;
}

double pearson(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size() || x.size() < 2) {
        return kNaN;
    }
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0;
    double syy = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        return kNaN;
    }
    return sxy / std::sqrt(sxx * syy);
}

double percentile(std::vector<double> values, double q)
{
    if (values.empty()) {
        return kNaN;
    }
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

ModelReport analyse(const HeadParams& params, const Benchmark& benchmark, const NmsConfig& nms_config)
{
    const HeadShape& shape = params.shape;
    ModelReport r;

    // Evaluation set: detections, scatter and background quality.
    const auto n_eval = static_cast<std::ptrdiff_t>(benchmark.eval.size());
    std::vector<std::vector<Detection>> dets(benchmark.eval.size());
    std::vector<NmsStageCounts> stages(benchmark.eval.size());
    std::vector<std::vector<ScatterRow>> scatter(benchmark.eval.size());
    std::vector<double> background(benchmark.eval.size(), kNaN);
    std::vector<int> positives(benchmark.eval.size(), 0);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n_eval; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const Scene& scene = benchmark.eval[k];
        const HeadOutputs out = forward(params, scene);
        dets[k] = nms(make_candidates(out, shape, scene), nms_config, &stages[k]);
        const Assignment a = assign(scene);
        positives[k] = a.num_positive;
        for (int z = 0; z < scene.num_points(); ++z) {
            const std::vector<double> q = predicted_quality(out, shape, z);
            if (q.empty()) {
                continue;
            }
            if (a.positive(z)) {
                const int c = a.label[static_cast<std::size_t>(z)];
                const double cls = sigmoid(out.row(z)[static_cast<std::size_t>(c - 1)]);
                const double quality = q.size() == 1 ? q[0] : q[static_cast<std::size_t>(c - 1)];
                scatter[k].push_back({scene.id, z, c, cls, quality});
            } else {
                const double m = *std::max_element(q.begin(), q.end());
                background[k] = std::isnan(background[k]) ? m : std::max(background[k], m);
            }
        }
    }

    std::vector<std::vector<GtBox>> gts;
    gts.reserve(benchmark.eval.size());
    for (const Scene& s : benchmark.eval) {
        gts.push_back(s.gt);
    }
    const std::vector<double> thresholds = coco_iou_thresholds();
    r.ap = evaluate_ap(dets, gts, thresholds);

    r.max_background_quality = kNaN;
    for (std::size_t k = 0; k < benchmark.eval.size(); ++k) {
        r.nms_stages.input += stages[k].input;
        r.nms_stages.after_threshold += stages[k].after_threshold;
        r.nms_stages.after_pre_topk += stages[k].after_pre_topk;
        r.nms_stages.after_suppression += stages[k].after_suppression;
        r.nms_stages.after_post_topk += stages[k].after_post_topk;
        r.scatter.insert(r.scatter.end(), scatter[k].begin(), scatter[k].end());
        r.eval_positives += positives[k];
        if (!std::isnan(background[k])) {
            r.max_background_quality = std::isnan(r.max_background_quality)
                                           ? background[k]
                                           : std::max(r.max_background_quality, background[k]);
        }
    }
    std::vector<double> xs;
    std::vector<double> ys;
    for (const ScatterRow& row : r.scatter) {
        xs.push_back(row.class_score);
        ys.push_back(row.quality_score);
    }
    r.scatter_correlation = pearson(xs, ys);

    // Training set: label statistics of the positives.
    for (const Scene& scene : benchmark.train) {
        const Assignment a = assign(scene);
        const HeadOutputs out = forward(params, scene);
        for (int z = 0; z < scene.num_points(); ++z) {
            if (!a.positive(z)) {
                continue;
            }
            const auto zi = static_cast<std::size_t>(z);
            const SideOffsets& target = a.target[zi];
            r.centerness_labels.push_back(centerness(target));
            const Box pred = decode(scene.point(z), predicted_offsets(shape, out.row(z)));
            r.iou_labels.push_back(quality_target(pred, scene.gt[static_cast<std::size_t>(a.gt_index[zi])].box));
            for (int s = 0; s < 4; ++s) {
                r.regression_targets.push_back(target[s]);
            }
        }
    }
    r.p10_centerness = percentile(r.centerness_labels, 0.1);
    r.p10_iou = percentile(r.iou_labels, 0.1);
    return r;
}

std::string metrics_csv(const MetricRows& rows)
{
    std::ostringstream os;
    os << "metric,value\n";
    for (const auto& [name, value] : rows) {
        os << name << ',' << format_double(value) << '\n';
    }
    return os.str();
}

MetricRows report_metrics(const ModelReport& r)
{
    MetricRows m{{"mean_ap", r.ap.mean_ap}};
    for (const auto& [thr, ap] : r.ap.ap_per_iou) {
        char name[32];
        std::snprintf(name, sizeof name, "ap%02d", static_cast<int>(std::lround(thr * 100.0)));
        m.emplace_back(name, ap);
    }
    m.emplace_back("classes_evaluated", r.ap.classes_evaluated);
    m.emplace_back("eval_positives", r.eval_positives);
    m.emplace_back("scatter_points", static_cast<double>(r.scatter.size()));
    m.emplace_back("scatter_correlation", r.scatter_correlation);
    m.emplace_back("max_background_quality", r.max_background_quality);
    m.emplace_back("train_positives", static_cast<double>(r.centerness_labels.size()));
    m.emplace_back("p10_centerness_label", r.p10_centerness);
    m.emplace_back("p10_iou_label", r.p10_iou);
    m.emplace_back("nms_input", static_cast<double>(r.nms_stages.input));
    m.emplace_back("nms_after_threshold", static_cast<double>(r.nms_stages.after_threshold));
    m.emplace_back("nms_after_pre_topk", static_cast<double>(r.nms_stages.after_pre_topk));
    m.emplace_back("nms_after_suppression", static_cast<double>(r.nms_stages.after_suppression));
    m.emplace_back("nms_after_post_topk", static_cast<double>(r.nms_stages.after_post_topk));
    return m;
}

std::string scatter_csv(std::span<const ScatterRow> rows)
{
    std::ostringstream os;
    os << "scene_id,point,class,class_score,quality_score\n";
    for (const ScatterRow& r : rows) {
        os << r.scene_id << ',' << r.point << ',' << r.class_id << ',' << format_double(r.class_score) << ','
           << format_double(r.quality_score) << '\n';
    }
    return os.str();
}

std::string histograms_csv(const ModelReport& report, int bins)
{
    const std::pair<double, double> unit{0.0, 1.0};
    std::string out = histogram_csv(label_histogram(report.centerness_labels, bins, unit), "centerness_label", true);
    out += histogram_csv(label_histogram(report.iou_labels, bins, unit), "iou_label", false);
    out += histogram_csv(label_histogram(report.regression_targets, bins), "regression_target", false);
    return out;
}

std::string distribution_dump_csv(const HeadParams& params, std::span<const Scene> scenes, int count)
{
    const HeadShape& shape = params.shape;
    std::ostringstream os;
    os << "scene_id,point,side,target,prediction,spread,knot,probability\n";
    int written = 0;
    for (const Scene& scene : scenes) {
        if (written >= count) {
            break;
        }
        const Assignment a = assign(scene);
        const HeadOutputs out = forward(params, scene);
        for (int z = 0; z < scene.num_points() && written < count; ++z) {
            if (!a.positive(z)) {
                continue;
            }
            ++written;
            const auto row = out.row(z);
            const SideOffsets pred = predicted_offsets(shape, row);
            const SideOffsets& target = a.target[static_cast<std::size_t>(z)];
            const int base = shape.regression_offset();
            for (int s = 0; s < 4; ++s) {
                const std::string prefix = std::to_string(scene.id) + ',' + std::to_string(z) + ',' +
                                           std::to_string(s) + ',' + format_double(target[s]) + ',' +
                                           format_double(pred[s]) + ',';
                if (shape.regressor == RegressorKind::General) {
                    const int k = shape.support.size();
                    const DiscreteDistribution d = softmax(
                        row.subspan(static_cast<std::size_t>(base + s * k), static_cast<std::size_t>(k)));
                    double var = 0.0;
                    for (int j = 0; j < k; ++j) {
                        const double dy = shape.support.knot(j) - pred[s];
                        var += d.probs[static_cast<std::size_t>(j)] * dy * dy;
                    }
                    for (int j = 0; j < k; ++j) {
                        os << prefix << format_double(std::sqrt(var)) << ',' << format_double(shape.support.knot(j))
                           << ',' << format_double(d.probs[static_cast<std::size_t>(j)]) << '\n';
                    }
                } else {
                    const double spread = shape.regressor == RegressorKind::Gaussian
                                              ? std::exp(0.5 * row[static_cast<std::size_t>(base + 4 + s)])
                                              : 0.0;
                    os << prefix << format_double(spread) << ',' << format_double(pred[s]) << ",1\n";
                }
            }
        }
    }
    return os.str();
}

std::string losses_csv(std::span<const double> curve)
{
    std::ostringstream os;
    os << "iteration,total\n";
    for (std::size_t i = 0; i < curve.size(); ++i) {
        os << i << ',' << format_double(curve[i]) << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

namespace {

class Outputs {
public:
    Outputs(fs::path dir, RunResult& result) : dir_(std::move(dir)), result_(result) {}

    void write(const std::string& name, const std::string& content)
    {
        std::ofstream f(dir_ / name, std::ios::binary);
        f << content;
        if (!f) {
            throw std::runtime_error("cannot write " + (dir_ / name).string());
        }
        result_.files.push_back(name);
    }

    const fs::path& dir() const { return dir_; }

private:
    fs::path dir_;
    RunResult& result_;
};

nlohmann::json metrics_json(const MetricRows& rows)
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : rows) {
        j[k] = v;
    }
    return j;
}

double mean_of_window(std::span<const double> v, bool tail, std::size_t window)
{
    if (v.empty()) {
        return kNaN;
    }
    const std::size_t w = std::min(window, v.size());
    const auto first = tail ? v.end() - static_cast<std::ptrdiff_t>(w) : v.begin();
    return std::accumulate(first, first + static_cast<std::ptrdiff_t>(w), 0.0) / static_cast<double>(w);
}

void gradcheck_command(const ExperimentConfig& c, Outputs& out, RunResult& r)
{
    GradcheckOptions o;
    o.samples = c.gradcheck.samples;
    o.step = c.gradcheck.step;
    o.seed = c.seed;
    o.inject_fault = c.gradcheck.inject_fault;
    const std::vector<GradcheckSuite> suites = run_gradchecks(o);
    out.write("metrics.csv", gradcheck_csv(suites));
    std::vector<std::string> failed;
    for (const GradcheckSuite& s : suites) {
        r.metrics[s.name] = s.max_rel_error;
        if (!s.passed()) {
            failed.push_back(s.name);
        }
    }
    if (failed.empty()) {
        r.summary = "all checks passed";
        return;
    }
    r.exit_code = 1;
    r.summary = std::to_string(failed.size()) + " of " + std::to_string(suites.size()) + " suites failed:";
    for (const std::string& f : failed) {
        r.summary += " " + f;
    }
}

void minima_command(const ExperimentConfig& c, Outputs& out, RunResult& r)
{
    MinimaOptions o;
    o.qfl_targets = c.minima.qfl_targets;
    o.dfl_targets = c.minima.dfl_targets;
    o.gfl_cases = c.minima.gfl_cases;
    o.gfl_candidates = c.minima.gfl_candidates;
    o.specialization_samples = c.minima.specialization_samples;
    o.seed = c.seed;
    o.support = c.train.support;
    o.beta = c.train.loss.beta;
    const std::vector<MinimaCheck> checks = run_minima(o);
    out.write("metrics.csv", minima_csv(checks));
    int failed = 0;
    for (const MinimaCheck& m : checks) {
        r.metrics[m.name] = m.worst;
        failed += m.passed ? 0 : 1;
    }
    r.exit_code = failed == 0 ? 0 : 1;
    r.summary = failed == 0 ? "all minima checks passed" : std::to_string(failed) + " minima checks failed";
}

void disturb_command(const ExperimentConfig& c, Outputs& out, RunResult& r)
{
    DisturbanceConfig d = c.disturb;
    d.seed = c.seed;
    const std::vector<DisturbanceCell> cells = disturbance_experiment(d);
    out.write("disturbance.csv", disturbance_csv(cells));

    std::vector<double> dirac;
    std::vector<double> general;
    int failed = 0;
    for (const DisturbanceCell& cell : cells) {
        failed += cell.converged ? 0 : 1;
        (cell.representation == "dirac" ? dirac : general).push_back(cell.median_error);
    }
    bool monotone = dirac.size() >= 2;
    for (std::size_t i = 1; i < dirac.size(); ++i) {
        monotone = monotone && dirac[i] > dirac[i - 1];
    }
    const bool general_lower = !dirac.empty() && !general.empty() && general.back() < dirac.back();
    const MetricRows m{{"dirac_monotone_increasing", monotone ? 1.0 : 0.0},
                       {"general_below_dirac_at_last_target", general_lower ? 1.0 : 0.0},
                       {"failed_cells", static_cast<double>(failed)}};
    out.write("metrics.csv", metrics_csv(m));
    r.metrics = metrics_json(m);
    r.summary = std::to_string(cells.size()) + " cells, " + std::to_string(failed) + " failed to converge";
}

void write_dataset_files(const Benchmark& b, const ExperimentConfig& c, Outputs& out)
{
    if (!c.data.write_dataset) {
        return;
    }
    std::ostringstream train;
    write_dataset(train, b.spec, b.train);
    out.write("train_dataset.jsonl", train.str());
    std::ostringstream eval;
    write_dataset(eval, b.spec, b.eval);
    out.write("eval_dataset.jsonl", eval.str());
}

MetricRows evaluation_outputs(const HeadParams& params, const Benchmark& b, const ExperimentConfig& c, Outputs& out)
{
    const ModelReport report = analyse(params, b, c.nms);
    std::vector<std::vector<Detection>> dets = detect_all(params, b.eval, c.nms);
    out.write("eval.csv", eval_csv(report.ap));
    out.write("detections.jsonl", detections_jsonl(dets));
    out.write("scatter.csv", scatter_csv(report.scatter));
    out.write("histograms.csv", histograms_csv(report, c.eval.histogram_bins));
    out.write("dist_dump.csv", distribution_dump_csv(params, b.eval, c.eval.dump_points));
    return report_metrics(report);
}

void train_command(const ExperimentConfig& c, Outputs& out, RunResult& r)
{
    const Benchmark b = make_benchmark(c);
    write_dataset_files(b, c, out);
    const TrainResult trained = train(b.train, b.spec.num_classes, c.train_config(), c.seed);
    out.write("checkpoint.json", save_checkpoint(trained.params));
    out.write("losses.csv", losses_csv(trained.loss_curve));

    MetricRows m{{"iterations", static_cast<double>(trained.loss_curve.size())},
                 {"initial_loss_avg100", mean_of_window(trained.loss_curve, false, 100)},
                 {"final_loss_avg100", mean_of_window(trained.loss_curve, true, 100)}};
    const MetricRows eval = evaluation_outputs(trained.params, b, c, out);
    m.insert(m.end(), eval.begin(), eval.end());
    out.write("metrics.csv", metrics_csv(m));
    r.metrics = metrics_json(m);
    r.summary = "mean AP " + format_double(m[3].second);
}

void eval_command(const ExperimentConfig& c, Outputs& out, RunResult& r)
{
    if (c.eval.checkpoint.empty()) {
        throw ConfigError("eval requires eval.checkpoint");
    }
    std::ifstream in(c.eval.checkpoint, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot read checkpoint '" + c.eval.checkpoint + "'");
    }
    std::ostringstream text;
    text << in.rdbuf();
    const HeadParams params = load_checkpoint(text.str());

    const Benchmark b = make_benchmark(c);
    const Scene& probe = b.eval.front();
    if (params.shape.num_classes != b.spec.num_classes || params.shape.feature_dim != probe.feature_dim ||
        (params.shape.mode == HeadMode::Tabular && params.shape.num_points != probe.num_points())) {
        throw ConfigError("checkpoint shape does not match the configured benchmark");
    }
    write_dataset_files(b, c, out);
    const MetricRows m = evaluation_outputs(params, b, c, out);
    out.write("metrics.csv", metrics_csv(m));
    r.metrics = metrics_json(m);
    r.summary = "mean AP " + format_double(m.front().second);
}

struct SweepCell {
    std::string axis;
    double beta = 0.0;
    int n = 0;
    double delta = 0.0;
};

std::vector<SweepCell> sweep_cells(const ExperimentConfig& c)
{
    const TrainConfig base = c.train_config();
    std::vector<SweepCell> cells;
    if (c.sweep.mode == "grid") {
        for (double beta : c.sweep.betas) {
            for (int n : c.sweep.ns) {
                for (double delta : c.sweep.deltas) {
                    cells.push_back({"grid", beta, n, delta});
                }
            }
        }
        return cells;
    }
    for (double beta : c.sweep.betas) {
        cells.push_back({"beta", beta, base.support.n, base.support.delta});
    }
    for (int n : c.sweep.ns) {
        cells.push_back({"n", base.loss.beta, n, base.support.delta});
    }
    for (double delta : c.sweep.deltas) {
        cells.push_back({"delta", base.loss.beta, base.support.n, delta});
    }
    return cells;
}

void sweep_command(const ExperimentConfig& c, Outputs& out, RunResult& r)
{
    const Benchmark b = make_benchmark(c);
    const std::vector<SweepCell> cells = sweep_cells(c);
    std::ostringstream os;
    os << "axis,beta,n,delta,mean_ap,ap50,ap75,final_loss_avg100\n";
    nlohmann::json rows = nlohmann::json::array();
    for (const SweepCell& cell : cells) {
        TrainConfig t = c.train_config();
        t.loss.beta = cell.beta;
        t.support.n = cell.n;
        t.support.delta = cell.delta;
        const TrainResult trained = train(b.train, b.spec.num_classes, t, c.seed);
        const EvalResult ap = evaluate_ap(detect_all(trained.params, b.eval, c.nms),
                                          [&] {
                                              std::vector<std::vector<GtBox>> g;
                                              for (const Scene& s : b.eval) {
                                                  g.push_back(s.gt);
                                              }
                                              return g;
                                          }(),
                                          coco_iou_thresholds());
        const double final_loss = mean_of_window(trained.loss_curve, true, 100);
        const double ap50 = ap.ap_per_iou.begin()->second;
        const double ap75 = std::next(ap.ap_per_iou.begin(), 5)->second;
        os << cell.axis << ',' << format_double(cell.beta) << ',' << cell.n << ',' << format_double(cell.delta) << ','
           << format_double(ap.mean_ap) << ',' << format_double(ap50) << ',' << format_double(ap75) << ','
           << format_double(final_loss) << '\n';
        rows.push_back({{"axis", cell.axis},
                        {"beta", cell.beta},
                        {"n", cell.n},
                        {"delta", cell.delta},
                        {"mean_ap", ap.mean_ap}});
    }
    out.write("metrics.csv", os.str());
    r.metrics = {{"cells", rows}};
    r.summary = std::to_string(cells.size()) + " sweep cells";
}

std::string utc_timestamp(std::chrono::system_clock::time_point t)
{
    const std::time_t tt = std::chrono::system_clock::to_time_t(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& c, const RunResult& r,
                    const std::string& started, double seconds)
{
    std::vector<std::string> files = r.files;
    std::sort(files.begin(), files.end());
    files.erase(std::unique(files.begin(), files.end()), files.end());
    const nlohmann::json manifest{{"run_name", c.run_name},
                                  {"command", command},
                                  {"version", GFL_VERSION},
                                  {"config", c},
                                  {"started_utc", started},
                                  {"wall_clock_seconds", seconds},
                                  {"exit_code", r.exit_code},
                                  {"summary", r.summary},
                                  {"files", files},
                                  {"metrics", r.metrics}};
    const fs::path tmp = dir / "manifest.json.tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        f << manifest.dump(2) << '\n';
        if (!f) {
            throw std::runtime_error("cannot write " + tmp.string());
        }
    }
    fs::rename(tmp, dir / "manifest.json");
}

}   // namespace

const std::vector<std::string>& command_names()
{
    static const std::vector<std::string> names{"gradcheck", "minima", "disturb", "train", "eval", "sweep"};
    return names;
}

RunResult run_command(const std::string& name, const ExperimentConfig& config, const fs::path& dir)
{
    config.validate();
    fs::create_directories(dir);
    const auto wall_start = std::chrono::system_clock::now();
    const auto start = std::chrono::steady_clock::now();

    RunResult r;
    Outputs out(dir, r);
    if (name == "gradcheck") {
        gradcheck_command(config, out, r);
    } else if (name == "minima") {
        minima_command(config, out, r);
    } else if (name == "disturb") {
        disturb_command(config, out, r);
    } else if (name == "train") {
        train_command(config, out, r);
    } else if (name == "eval") {
        eval_command(config, out, r);
    } else if (name == "sweep") {
        sweep_command(config, out, r);
    } else {
        throw ConfigError("unknown command '" + name + "'");
    }

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.files.push_back("manifest.json");
    write_manifest(dir, name, config, r, utc_timestamp(wall_start), seconds);
    return r;
}

}   // namespace gfl
