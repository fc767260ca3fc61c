// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits nonzero if any fails.
#include <driftforge/bench.hpp>
#include <driftforge/generator.hpp>
#include <driftforge/snapshots.hpp>
#include <driftforge/synthetic.hpp>
#include <driftforge/workload.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <iomanip>
#include <sstream>
#include <sys/wait.h>

using namespace driftforge;
namespace fs = std::filesystem;

namespace {

int failures = 0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

void criterion(int n, const std::string& title, double budgetSeconds, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > budgetSeconds) {
        o.pass = false;
        o.detail += " [over time budget " + formatNumber(budgetSeconds) + "s]";
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << ": " << title << " (" << std::fixed
              << std::setprecision(2) << secs << "s) " << o.detail << std::endl;
    std::cout.unsetf(std::ios::fixed);
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
}

double relativeError(double a, double b) { return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-6); }

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, Rng& rng) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

AttributeProfile categorical(std::vector<std::string> cats, std::vector<double> p) {
    return {"c", AttributeKind::kCategorical, {}, std::move(cats), std::move(p)};
}

FitConfig testProfile(std::uint64_t seed) {
    FitConfig f;
    f.diffuser.hidden = {64, 128, 128, 64};
    f.diffuser.steps = 3000;
    f.diffuser.timesteps = 100;
    f.diffuser.seed = seed;
    f.drifter.hidden = {64, 64};
    f.drifter.steps = 2000;
    f.drifter.seed = seed + 1;
    f.calibration.seed = seed + 2;
    return f;
}

drifter::GenerationResult generateAt(const Generator& g, const Table& original, double d, std::uint64_t seed) {
    drifter::GenerateOptions opts;
    opts.seed = deriveSeed(seed, static_cast<std::uint64_t>(d * 1000.0));
    return generate(g, original, DriftFactor(d), opts);
}

// 1 -------------------------------------------------------------------------------------------------

Outcome divergences() {
    const std::vector<double> p{0.5, 0.5}, q{0.25, 0.75};
    const double kl = klDivergence(p, q);
    const double js = jsDivergence(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0});
    DistributionProfile a{{categorical({"A", "B"}, {0.5, 0.5})}};
    DistributionProfile b{{categorical({"A"}, {1.0})}};
    DistributionProfile x{{categorical({"A"}, {1.0})}};
    DistributionProfile y{{categorical({"B"}, {1.0})}};
    const double d = driftFactor(a, b).aggregate.value();
    const double disjoint = driftFactor(x, y, 1e-12).aggregate.value();
    const double selfKl = klDivergence(p, p), selfJs = jsDivergence(q, q), selfD = driftFactor(a, a).aggregate.value();
    const bool ok = std::abs(kl - 0.143841) <= 1e-6 && std::abs(js - 0.215762) <= 1e-6 && std::abs(d - 0.311278) <= 1e-6
        && std::abs(disjoint - 1.0) <= 1e-6 && selfKl == 0.0 && selfJs == 0.0 && selfD == 0.0;
    return {ok, "KL=" + fmt(kl) + " JS=" + fmt(js) + " d=" + fmt(d) + " disjoint=" + fmt(disjoint)};
}

// 2 -------------------------------------------------------------------------------------------------

Outcome ddpmConsistency() {
    const auto s = diffusion::makeSchedule(10, 1e-4, 0.2);
    Rng rng(2);
    const Eigen::MatrixXd x0 = gaussian(5, 4, rng);
    double forwardErr = 0.0, posteriorErr = 0.0;
    for (std::size_t T = 1; T <= 10; ++T) {
        Eigen::MatrixXd x = x0, carried = Eigen::MatrixXd::Zero(5, 4);
        for (std::size_t t = 1; t <= T; ++t) {
            const Eigen::MatrixXd e = gaussian(5, 4, rng);
            x = std::sqrt(s.alphaAt(t)) * x + std::sqrt(s.betaAt(t)) * e;
            carried = std::sqrt(s.alphaAt(t)) * carried + std::sqrt(s.betaAt(t)) * e;
        }
        const auto closed = diffusion::forwardSample({x0, true}, T, carried / std::sqrt(1.0 - s.alphaBarAt(T)), s);
        forwardErr = std::max(forwardErr, (closed.values - x).cwiseAbs().maxCoeff());

        const Eigen::MatrixXd eps = gaussian(5, 4, rng);
        const double ab = s.alphaBarAt(T), abPrev = T == 1 ? 1.0 : s.alphaBarAt(T - 1);
        const Eigen::MatrixXd xt = std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
        const Eigen::MatrixXd oracle = (std::sqrt(abPrev) * s.betaAt(T) / (1.0 - ab)) * x0
            + (std::sqrt(s.alphaAt(T)) * (1.0 - abPrev) / (1.0 - ab)) * xt;
        posteriorErr = std::max(posteriorErr, (diffusion::posteriorMean(xt, eps, T, s) - oracle).cwiseAbs().maxCoeff());
    }
    return {forwardErr <= 1e-10 && posteriorErr <= 1e-10,
            "forward max err=" + fmt(forwardErr) + " posterior max err=" + fmt(posteriorErr)};
}

// 3 -------------------------------------------------------------------------------------------------

Outcome gradients() {
    using namespace nn;
    const double h = 1e-5;
    Rng rng(3);

    Mlp m({{4, 6, 5, 3}, Activation::kSilu, 11});
    const Eigen::MatrixXd batch = gaussian(7, 4, rng);
    const Eigen::MatrixXd target = gaussian(7, 3, rng);
    const LossFn loss = [&](const Eigen::MatrixXd& out, Eigen::MatrixXd& g) {
        const Eigen::MatrixXd diff = out - target;
        g = diff / static_cast<double>(out.rows());
        return 0.5 * diff.squaredNorm() / static_cast<double>(out.rows());
    };
    const auto analytic = parameterGradients(m, batch, loss);
    auto lossAt = [&] {
        Eigen::MatrixXd g;
        return loss(forwardBatch(m, batch), g);
    };
    double paramWorst = 0.0;
    for (std::size_t l = 0; l < m.layers().size(); ++l) {
        auto probe = [&](double& param, double grad) {
            const double saved = param;
            param = saved + h;
            const double up = lossAt();
            param = saved - h;
            const double down = lossAt();
            param = saved;
            paramWorst = std::max(paramWorst, relativeError((up - down) / (2 * h), grad));
        };
        auto& layer = m.layers()[l];
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) probe(layer.weight.data()[i], analytic.gradients.weight[l].data()[i]);
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) probe(layer.bias(i), analytic.gradients.bias[l](i));
    }

    const PotentialFn potential = [](const Eigen::MatrixXd& in, const Eigen::MatrixXd& out, Eigen::MatrixXd& og,
                                     Eigen::MatrixXd& ig) {
        og = out;
        ig = in.array().cos().matrix();
        return 0.5 * out.squaredNorm() + in.array().sin().sum();
    };
    std::vector<double> x{0.2, -0.7, 1.1, 0.05};
    const Eigen::VectorXd g = inputGradient(m, x, potential);
    double inputWorst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        auto value = [&](double delta) {
            Eigen::MatrixXd row(1, 4);
            for (int c = 0; c < 4; ++c) row(0, c) = x[static_cast<std::size_t>(c)];
            row(0, static_cast<Eigen::Index>(i)) += delta;
            Eigen::MatrixXd og, ig;
            return potential(row, forwardBatch(m, row), og, ig);
        };
        inputWorst = std::max(inputWorst, relativeError((value(h) - value(-h)) / (2 * h), g(static_cast<Eigen::Index>(i))));
    }

    const Table t = synthetic::calibrationTable(16, 7);
    const auto spec = EncodingSpec::fromSchema(t.schema());
    const Eigen::MatrixXd ref = encodeTable(t, spec).values;
    const Eigen::MatrixXd pred = ref + 0.3 * gaussian(ref.rows(), ref.cols(), rng);
    const drifter::DriftLossConfig cfg;
    const auto dl = drifter::driftLoss(pred, ref, 0.25, spec, cfg);
    double lossWorst = 0.0;
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
        Eigen::MatrixXd up = pred, down = pred;
        up.data()[i] += h;
        down.data()[i] -= h;
        const double fd = (drifter::driftLoss(up, ref, 0.25, spec, cfg).value - drifter::driftLoss(down, ref, 0.25, spec, cfg).value) / (2 * h);
        lossWorst = std::max(lossWorst, relativeError(fd, dl.predGrad.data()[i]));
    }
    return {paramWorst <= 1e-4 && inputWorst <= 1e-4 && lossWorst <= 1e-3,
            "param rel=" + fmt(paramWorst) + " input rel=" + fmt(inputWorst) + " drift_loss rel=" + fmt(lossWorst)};
}

// 6 -------------------------------------------------------------------------------------------------

Outcome guidanceOff() {
    const Table data = synthetic::calibrationTable(500, 21);
    diffusion::DiffuserConfig dc;
    dc.hidden = {32, 32};
    dc.steps = 100;
    dc.timesteps = 50;
    dc.seed = 1;
    drifter::DrifterConfig rc;
    rc.hidden = {32};
    rc.steps = 100;
    rc.seed = 2;
    const auto diffuser = diffusion::trainDiffuser(data, dc);
    const auto dr = drifter::trainDrifter(diffuser, data, rc);
    drifter::GuidanceConfig off;
    off.scale = 0.0;
    bool identical = true;
    for (double d : {0.0, 0.3, 0.9}) {
        diffusion::SamplingOptions opts;
        opts.seed = 99;
        const auto unguided = diffusion::reverseProcess(diffuser, 1000, opts);
        const auto guided = drifter::guidedSampleEncoded(diffuser, dr, DriftFactor(d), 1000, off, 99);
        identical = identical && guided.values.rows() == unguided.values.rows() && guided.values == unguided.values;
    }
    return {identical, identical ? "1000 rows x 3 targets bit-identical" : "outputs differ"};
}

// 8 -------------------------------------------------------------------------------------------------

snapshots::SnapshotLibrary library(std::vector<double> alphas, snapshots::Policy policy = snapshots::Policy::kReject) {
    snapshots::SnapshotLibrary lib;
    lib.policy = policy;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        lib.entries.push_back({"s" + std::to_string(i), static_cast<std::int64_t>(i), alphas[i], "", "", nullptr});
    }
    lib.baseId = lib.entries.front().id;
    return lib;
}

Outcome snapshotAgent() {
    using snapshots::Selection;
    std::vector<std::string> bad;
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok) bad.push_back(what);
    };
    const auto argmin = selectGenerator(library({0.1, 0.3, 0.5}), DriftFactor(0.25));
    expect(argmin.kind == Selection::Kind::kGenerator && argmin.index == 1, "argmin {0.1,0.3,0.5} at 0.25");
    expect(selectGenerator(library({0.1, 0.3}), DriftFactor(0.2)).index == 0, "tie {0.1,0.3} at 0.2");
    expect(selectGenerator(library({0.3, 0.1}), DriftFactor(0.2)).index == 0, "tie {0.3,0.1} at 0.2");
    const auto rejected = selectGenerator(library({0.1}), DriftFactor(0.9));
    expect(rejected.kind == Selection::Kind::kRejected, "reject 0.9 vs {0.1}");
    expect(selectGenerator(library({0.1}), DriftFactor(0.25)).kind == Selection::Kind::kGenerator, "accept at tau");
    const auto lib = library({0.0, 0.4});
    for (int k = 0; k <= 100; ++k) {
        const double d = k / 100.0;
        const double min = std::min(d, std::abs(d - 0.4));
        const bool rej = selectGenerator(lib, DriftFactor(d)).kind == Selection::Kind::kRejected;
        expect(rej == (min > 0.15 + snapshots::kDistanceTolerance), "rejection rule at d=" + fmt(d));
    }
    const auto mid = interpolatePlan(library({0.1, 0.5}, snapshots::Policy::kExtrapolate), 0.3);
    expect(mid.lo == 0 && mid.hi == 1 && std::abs(mid.weightLo - 0.5) <= 1e-12 && std::abs(mid.weightHi - 0.5) <= 1e-12,
           "midpoint weights");
    return {bad.empty(), bad.empty() ? "all enumerated cases match" : "mismatch: " + bad.front()};
}

// 9 -------------------------------------------------------------------------------------------------

Outcome metrics() {
    using namespace bench;
    const double reg = performanceRegression(120, 100);
    const double drop = throughputDrop(80, 100);
    std::vector<MetricReport> rs(4);
    const double exe[] = {100, 113, 150, 190}, tps[] = {1000, 880, 700, 520}, ds[] = {0.0, 0.1, 0.3, 0.5};
    for (int i = 0; i < 4; ++i) {
        rs[static_cast<std::size_t>(i)].sut = "plr";
        rs[static_cast<std::size_t>(i)].d = ds[3 - i];
        rs[static_cast<std::size_t>(i)].exeTotalMs = exe[3 - i];
        rs[static_cast<std::size_t>(i)].tps = tps[3 - i];
    }
    for (auto& r : rs) applyBaseline(r, rs[3]);
    const auto s = aggregateReport(rs);
    double worst = 0.0;
    bool sorted = true;
    for (std::size_t i = 0; i < s.rows.size(); ++i) {
        const auto& r = s.rows[i];
        if (i > 0) sorted = sorted && s.rows[i - 1].d <= r.d;
        worst = std::max(worst, std::abs(*r.regression - (r.exeTotalMs - s.rows[0].exeTotalMs) / s.rows[0].exeTotalMs));
        worst = std::max(worst, std::abs(*r.dropPct - (1.0 - r.tps / s.rows[0].tps) * 100.0));
    }
    const bool ok = std::abs(reg - 0.2) <= 1e-12 && std::abs(drop - 20.0) <= 1e-12 && sorted && s.rows[0].d == 0.0
        && worst <= 1e-12 && s.toCsv().rfind(kSummaryHeader, 0) == 0;
    return {ok, "regression=" + fmt(reg) + " drop=" + fmt(drop) + "% consistency err=" + fmt(worst)};
}

// 4 / 5 ---------------------------------------------------------------------------------------------

struct SeedRun {
    std::vector<double> achieved;
    std::vector<double> corr;
};

SeedRun calibrationSweep(const Generator& g, const Table& original, std::uint64_t seed) {
    SeedRun r;
    for (double d : {0.1, 0.3, 0.5}) {
        const auto res = generateAt(g, original, d, seed);
        r.achieved.push_back(res.achieved.aggregate.value());
        r.corr.push_back(res.correlationError);
    }
    return r;
}

std::string list(const std::vector<double>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(v[i]);
    return s + "]";
}

int runCli(const std::string& args) {
    const int status = std::system((std::string(DRIFTFORGE_CLI) + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}// namespace

int main() {
    const fs::path work = fs::temp_directory_path() / "driftforge_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);

    criterion(1, "divergence exactness", 1, divergences);
    criterion(2, "DDPM internal consistency", 5, ddpmConsistency);
    criterion(3, "gradient suite", 30, gradients);

    const Table calibration = synthetic::calibrationTable(10000, 1);
    std::vector<Generator> generators;
    criterion(4, "fidelity at zero drift", 15 * 60, [&]() -> Outcome {
        generators.push_back(fitGenerator(calibration, testProfile(1)));
        const auto res = generateAt(generators[0], calibration, 0.0, 1);
        const double d = res.achieved.aggregate.value();
        return {d <= 0.10 && res.correlationError <= 0.10,
                "d=" + fmt(d) + " corr_err=" + fmt(res.correlationError) + " scale=" + fmt(generators[0].drifter.guidance.scale)};
    });

    criterion(5, "calibration monotonicity and control", 20 * 60, [&]() -> Outcome {
        if (generators.empty()) generators.push_back(fitGenerator(calibration, testProfile(1)));
        generators.push_back(fitGenerator(calibration, testProfile(11)));
        generators.push_back(fitGenerator(calibration, testProfile(21)));
        const std::vector<double> targets{0.1, 0.3, 0.5};
        bool control = true;
        int corrMonotone = 0;
        std::string detail;
        for (std::size_t k = 0; k < generators.size(); ++k) {
            const auto run = calibrationSweep(generators[k], calibration, 100 + k);
            for (std::size_t i = 0; i < 3; ++i) {
                control = control && std::abs(run.achieved[i] - targets[i]) <= 0.1;
                if (i > 0) control = control && run.achieved[i] > run.achieved[i - 1];
            }
            const bool mono = run.corr[1] >= run.corr[0] && run.corr[2] >= run.corr[1];
            corrMonotone += mono ? 1 : 0;
            detail += "seed" + std::to_string(k) + " d=" + list(run.achieved) + " corr=" + list(run.corr) + "; ";
        }
        return {control && corrMonotone >= 2, detail + "corr monotone in " + std::to_string(corrMonotone) + "/3"};
    });

    criterion(6, "guidance-off equivalence", 60, guidanceOff);

    criterion(7, "workload drift skew", 10 * 60, [&]() -> Outcome {
        const auto wl = synthetic::workloadTable(10000, 7);
        const Generator g = fitGenerator(wl.table(), testProfile(31));
        const auto low = workload::categoryStats(generateAt(g, wl.table(), 0.1, 7).table, workload_columns::kJoinPattern);
        const auto high = workload::categoryStats(generateAt(g, wl.table(), 0.5, 7).table, workload_columns::kJoinPattern);
        return {high.entropy < low.entropy && high.surviving < low.surviving,
                "entropy " + fmt(low.entropy) + " -> " + fmt(high.entropy) + ", surviving " + std::to_string(low.surviving)
                    + " -> " + std::to_string(high.surviving)};
    });

    criterion(8, "snapshot agent rules", 1, snapshotAgent);
    criterion(9, "metric exactness", 1, metrics);

    const Table keyed = synthetic::calibrationTable(10000, 1, true);
    const fs::path models = work / "keyed_models";
    criterion(10, "end-to-end trend reproduction", 10 * 60, [&]() -> Outcome {
        const Generator g = fitGenerator(keyed, testProfile(41));
        saveGenerator(models.string(), g);
        std::map<double, Table> drifted;
        for (double d : {0.1, 0.3, 0.5}) drifted.emplace(d, generateAt(g, keyed, d, 41).table);

        bench::ScenarioConfig sc;
        sc.key = "id";
        sc.testOps = 1000;
        sc.testSeed = 5;
        std::vector<double> tps, q50;
        for (double d : {0.1, 0.3, 0.5}) {
            bench::PlrSut plr;
            tps.push_back(bench::runBenchmark(bench::buildScenario(keyed, drifted.at(d), bench::ScenarioKind::kDriftBackInsert, d, sc), plr).tps);
        }
        sc.testKind = bench::TestKind::kEstimate;
        for (double d : {0.1, 0.3, 0.5}) {
            bench::HistogramSut hist;
            q50.push_back(*bench::runBenchmark(bench::buildScenario(keyed, drifted.at(d), bench::ScenarioKind::kTrainDriftedTestOriginal, d, sc), hist).qerrP50);
        }
        const bool ok = tps[1] <= tps[0] && tps[2] <= tps[1] && q50[1] >= q50[0] && q50[2] >= q50[1];
        return {ok, "plr tps=" + list(tps) + " hist qerr_p50=" + list(q50)};
    });

    criterion(11, "reproducibility from echoed config", 10 * 60, [&]() -> Outcome {
        if (!fs::exists(models / "generator.json")) {
            saveGenerator(models.string(), fitGenerator(keyed, testProfile(41)));
        }
        const auto original = (work / "keyed.csv").string();
        writeTable(original, keyed);
        nlohmann::json cfg{{"bench", {{"scenario", "drift_back_insert"}, {"sut", "plr"}, {"d_list", {0.0, 0.1, 0.3}},
                                      {"original", original}, {"models", models.string()}, {"test_ops", 500}}},
                           {"seeds", {{"master", 3}}}};
        const auto cfgPath = (work / "bench.json").string();
        writeText(cfgPath, cfg.dump(2));
        const auto first = work / "run1", second = work / "run2";
        if (runCli("bench --config " + cfgPath + " --out " + first.string()) != 0) return {false, "first run failed"};
        if (runCli("bench --config " + (first / "config.json").string() + " --out " + second.string()) != 0) {
            return {false, "rerun from echoed config failed"};
        }
        const auto a = csv::readFile((first / "summary.csv").string());
        const auto b = csv::readFile((second / "summary.csv").string());
        return {a == b && !a.empty(), a == b ? "summary.csv byte-identical (" + std::to_string(a.size()) + " bytes)"
                                             : "summary.csv differs"};
    });

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
