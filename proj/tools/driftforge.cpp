/*
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#include <driftforge/bench.hpp>
#include <driftforge/config.hpp>
#include <driftforge/dist.hpp>
#include <driftforge/generator.hpp>
#include <driftforge/snapshots.hpp>
#include <driftforge/synthetic.hpp>
#include <driftforge/tabular.hpp>
#include <driftforge/workload.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <bit>
#include <filesystem>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace driftforge;

namespace {

void log(const std::string& msg) { std::cerr << "driftforge: " << msg << "\n"; }

RunConfig configFrom(const std::string& path) {
    return path.empty() ? runConfigFromJson(nlohmann::json::object(), seedFromEnvironment()) : loadRunConfig(path);
}

void echoConfig(const RunConfig& cfg, const fs::path& dir, const std::string& name) {
    writeText((dir / name).string(), cfg.toJson().dump(2) + "\n");
}

std::vector<double> parseDList(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto v = parseNumber(item);
        if (!v || *v < 0.0 || *v > 1.0) failInput("--d-list: '" + item + "' is not a drift factor in [0, 1]");
        out.push_back(*v);
    }
    if (out.empty()) failInput("--d-list is empty");
    return out;
}

/// Loads several CSVs under one schema: their sidecars when every file has one (all must agree), otherwise a
/// schema inferred over all records together.
std::vector<Table> loadJoint(const std::vector<std::string>& paths, const SchemaOverrides& overrides) {
    std::vector<csv::Document> docs;
    bool allSidecars = true;
    for (const auto& p : paths) {
        docs.push_back(csv::read(p));
        allSidecars = allSidecars && fs::exists(schemaSidecarPath(p));
        if (docs.back().header != docs.front().header) failInput(p + ": header differs from " + paths.front());
    }
    std::vector<Table> out;
    if (allSidecars) {
        for (std::size_t i = 0; i < paths.size(); ++i) {
            out.push_back(tableFromDocument(docs[i], readSchema(schemaSidecarPath(paths[i])), paths[i]));
        }
        return out;
    }
    csv::Document joint;
    joint.header = docs.front().header;
    for (const auto& d : docs) {
        joint.records.insert(joint.records.end(), d.records.begin(), d.records.end());
        joint.lines.insert(joint.lines.end(), d.lines.begin(), d.lines.end());
    }
    const Schema schema = inferSchema(joint, overrides);
    for (std::size_t i = 0; i < paths.size(); ++i) out.push_back(tableFromDocument(docs[i], schema, paths[i]));
    return out;
}

std::string keyAttribute(const RunConfig& cfg, const Schema& schema) {
    if (!cfg.key.empty()) return cfg.key;
    for (std::size_t c = 0; c < schema.size(); ++c) {
        if (schema[c].kind == AttributeKind::kKey) return schema[c].name;
    }
    return {};
}

bool isWorkloadSchema(const Schema& s) {
    return s.size() == 3 && s[0].name == workload_columns::kJoinPattern && s[1].name == workload_columns::kPredicate
        && s[2].name == workload_columns::kInterval;
}

// ---------------------------------------------------------------------------

struct FitArgs {
    std::string config, table, workload, base, out;
    std::vector<std::string> snapshots;
};

int runFit(const FitArgs& a) {
    const int sources = !a.table.empty() + !a.workload.empty() + !a.snapshots.empty();
    if (sources != 1) failInput("fit: give exactly one of --table, --workload, --snapshots");
    RunConfig cfg = configFrom(a.config);
    const fs::path out = a.out.empty() ? fs::path(cfg.outputDir) : fs::path(a.out);
    cfg.outputDir = out.string();
    fs::create_directories(out);
    echoConfig(cfg, out, "config.json");
    const auto overrides = overridesFromJson(cfg.overrides);

    if (!a.snapshots.empty()) {
        std::vector<snapshots::Snapshot> snaps;
        const auto tables = loadJoint(a.snapshots, overrides);
        std::set<std::string> ids;
        for (std::size_t i = 0; i < a.snapshots.size(); ++i) {
            const std::string id = fs::path(a.snapshots[i]).stem().string();
            if (!ids.insert(id).second) failInput("fit: duplicate snapshot id '" + id + "'");
            snaps.push_back({id, tables[i], static_cast<std::int64_t>(i)});
        }
        const std::string base = a.base.empty() ? snaps.front().id : a.base;
        snapshots::LibraryConfig lc{cfg.resolvedFit(), cfg.tau, cfg.policy, cfg.binning};
        log("training " + std::to_string(snaps.size()) + " snapshot generators");
        auto lib = snapshots::buildLibrary(snaps, base, lc);
        for (std::size_t i = 0; i < lib.entries.size(); ++i) {
            auto& e = lib.entries[i];
            e.table = e.checkpoint + "/snapshot.csv";
            const auto& snap = *std::find_if(snaps.begin(), snaps.end(), [&](const auto& s) { return s.id == e.id; });
            writeTable((out / e.table).string(), snap.table);
        }
        snapshots::saveLibrary(out.string(), lib);
        std::cout << lib.toJson().dump(2) << "\n";
        return 0;
    }

    Table data = !a.table.empty()
        ? [&] {
              auto doc = csv::read(a.table);
              const auto sidecar = schemaSidecarPath(a.table);
              Schema s = fs::exists(sidecar) ? readSchema(sidecar) : inferSchema(doc, overrides);
              return tableFromDocument(doc, s, a.table);
          }()
        : workload::loadWorkload(a.workload).table();
    log("training on " + std::to_string(data.size()) + " rows");
    const Generator g = fitGenerator(data, cfg.resolvedFit());
    saveGenerator(out.string(), g);
    nlohmann::json report{{"rows", data.size()},
                          {"diffuser", g.diffuser.meta.toJson()},
                          {"drifter", g.drifter.meta.toJson()},
                          {"guidance_scale", g.drifter.guidance.scale},
                          {"calibration", g.calibration ? g.calibration->toJson() : nlohmann::json(nullptr)}};
    writeText((out / "fit.json").string(), report.dump(2) + "\n");
    std::cout << report.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct DriftArgs {
    std::string a, b, config, out;
    std::optional<std::size_t> bins;
    std::optional<double> smoothing;
};

int runDrift(const DriftArgs& a) {
    RunConfig cfg = configFrom(a.config);
    if (a.bins) cfg.binning.bins = *a.bins;
    if (a.smoothing) cfg.binning.smoothing = *a.smoothing;
    cfg.binning.validate();
    const auto tables = loadJoint({a.a, a.b}, overridesFromJson(cfg.overrides));
    const auto report = driftBetween(tables[0], tables[1], cfg.binning);
    nlohmann::json j = toJson(report);
    j["bins"] = cfg.binning.bins;
    j["smoothing"] = cfg.binning.smoothing;
    const std::string text = j.dump(2) + "\n";
    std::cout << text;
    if (!a.out.empty()) {
        writeText(a.out, text);
        echoConfig(cfg, fs::path(a.out).parent_path(), "drift.config.json");
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct GenArgs {
    std::string models, library, original, out, report, config, render, stream, mode;
    double d = 0.0;
    std::optional<std::size_t> n;
    std::optional<std::uint64_t> seed;
    std::optional<double> scale;
};

int runGen(const GenArgs& a) {
    if (a.models.empty() == a.library.empty()) failInput("gen: give exactly one of --models, --library");
    RunConfig cfg = configFrom(a.config);
    const DriftFactor target(a.d);
    const fs::path out(a.out);
    const fs::path reportPath = a.report.empty() ? fs::path(out).replace_extension(".report.json") : fs::path(a.report);
    drifter::GenerateOptions opts;
    opts.seed = a.seed.value_or(cfg.seeds.samplingSeed());
    opts.rows = a.n;
    opts.binning = cfg.binning;
    opts.threads = cfg.threads;

    nlohmann::json report;
    Table table;
    if (!a.models.empty()) {
        const Generator g = loadGenerator(a.models);
        if (a.original.empty()) failInput("gen: --original is required with --models");
        const Table original = loadTable(a.original, g.schema());
        drifter::GuidanceConfig gc = g.drifter.guidance;
        if (a.scale) gc.scale = *a.scale;
        if (!a.mode.empty()) gc.mode = drifter::parseGuidanceMode(a.mode);
        opts.guidance = gc;
        auto result = generate(g, original, target, opts);
        if (isWorkloadSchema(result.table.schema())) {
            workload::WorkloadDriftResult wr{driftforge::WorkloadTable(result.table), result};
            report = wr.toJson();
        } else {
            report = result.toJson();
        }
        if (result.calibrationWarning) log("warning: " + result.warning);
        table = std::move(result.table);
        report["models"] = a.models;
    } else {
        const auto lib = snapshots::loadLibrary(a.library);
        const fs::path root = fs::path(a.library).parent_path();
        std::vector<snapshots::Snapshot> snaps;
        for (const auto& e : lib.entries) {
            if (e.table.empty()) failInput("library entry '" + e.id + "' lists no snapshot table");
            snaps.push_back({e.id, loadTable((root / e.table).string(), e.generator->schema()), e.order});
        }
        const Table* base = nullptr;
        for (const auto& s : snaps) {
            if (s.id == lib.baseId) base = &s.table;
        }
        const std::size_t n = a.n.value_or(base->size());
        auto result = snapshots::generateFromLibrary(lib, snaps, target, n, opts, cfg.binning);
        report = result.toJson(target.value());
        report["seed"] = opts.seed;
        report["library"] = a.library;
        table = std::move(result.table);
    }
    writeTable(out.string(), table);
    if (!a.stream.empty()) {
        if (!isWorkloadSchema(table.schema())) failInput("gen: --stream needs a workload model");
        const driftforge::WorkloadTable w(table);
        const auto spec = a.render.empty() ? workload::RenderSpec::cartesian(table.schema())
                                           : workload::RenderSpec::fromJson(nn::readJsonFile(a.render));
        workload::RealizeOptions ro;
        ro.shuffleSeed = cfg.shuffleSeed;
        workload::writeStream(a.stream, workload::realizeStream(w, spec, ro));
    }
    writeText(reportPath.string(), report.dump(2) + "\n");
    echoConfig(cfg, out.parent_path(), "gen.config.json");
    std::cout << report.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string config, scenario, sut, sutCmd, dList, original, models, out, costMode;
    std::vector<std::string> drifted;
    std::optional<std::size_t> testOps;
};

std::unique_ptr<bench::SutAdapter> makeSut(const RunConfig& cfg, const fs::path& out) {
    const auto& b = cfg.bench;
    if (b.sut == "plr") return std::make_unique<bench::PlrSut>(b.plrEpsilon);
    if (b.sut == "hist") return std::make_unique<bench::HistogramSut>(b.histBins);
    if (b.sut == "extern") {
        if (b.sutCommand.empty()) failInput("bench: --sut extern needs --sut-cmd");
        return std::make_unique<bench::ExternalSut>(b.sutCommand, out.string());
    }
    failInput("bench: unknown SUT '" + b.sut + "' (expected plr, hist or extern)");
}

int runBench(const BenchArgs& a) {
    RunConfig cfg = configFrom(a.config);
    auto& b = cfg.bench;
    if (!a.scenario.empty()) b.scenario = a.scenario;
    if (!a.sut.empty()) b.sut = a.sut;
    if (!a.sutCmd.empty()) b.sutCommand = a.sutCmd;
    if (!a.dList.empty()) b.dList = parseDList(a.dList);
    if (!a.original.empty()) b.original = a.original;
    if (!a.models.empty()) b.models = a.models;
    if (!a.costMode.empty()) b.costMode = a.costMode;
    if (a.testOps) b.testOps = *a.testOps;
    for (const auto& item : a.drifted) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) failInput("--drifted expects d=path, got '" + item + "'");
        b.drifted[item.substr(0, eq)] = item.substr(eq + 1);
    }
    if (!a.out.empty()) cfg.outputDir = a.out;
    if (b.original.empty()) failInput("bench: no original table (--original or bench.original)");
    const auto kind = bench::parseScenarioKind(b.scenario);
    const auto costMode = bench::parseCostMode(b.costMode);
    const fs::path out(cfg.outputDir);
    fs::create_directories(out);
    echoConfig(cfg, out, "config.json");
    if (b.sut != "plr" && b.sut != "hist" && b.sut != "extern") failInput("bench: unknown SUT '" + b.sut + "'");

    std::optional<Generator> gen;
    if (!b.models.empty()) gen = loadGenerator(b.models);
    const Table original = gen ? loadTable(b.original, gen->schema()) : loadTableAuto(b.original);

    bench::ScenarioConfig sc;
    sc.testOps = b.testOps;
    sc.testSeed = cfg.seeds.testSetSeed();
    sc.key = keyAttribute(cfg, original.schema());
    sc.maxPredicates = b.maxPredicates;
    sc.testKind = !b.testKind.empty() ? bench::parseTestKind(b.testKind)
        : b.sut == "hist"            ? bench::TestKind::kEstimate
                                     : bench::TestKind::kLookup;

    bench::BenchConfig bc;
    bc.costMode = costMode;
    bc.unitMs = b.unitMs;
    bc.configDigest = bench::digest(cfg.toJson().dump());
    bc.samplingSeed = cfg.seeds.samplingSeed();

    auto driftedFor = [&](double d) -> std::optional<Table> {
        if (d == 0.0) return std::nullopt;
        for (const auto& [label, path] : b.drifted) {
            auto v = parseNumber(label);
            if (v && *v == d) return loadTable(path, original.schema());
        }
        if (!gen) failInput("bench: no drifted table for d=" + formatNumber(d) + " and no --models to generate one");
        drifter::GenerateOptions go;
        go.seed = deriveSeed(cfg.seeds.samplingSeed(), std::bit_cast<std::uint64_t>(d));
        go.binning = cfg.binning;
        go.threads = cfg.threads;
        auto result = generate(*gen, original, DriftFactor(d), go);
        const fs::path path = out / "drifted" / ("d_" + formatNumber(d) + ".csv");
        writeTable(path.string(), result.table);
        writeText(fs::path(path).replace_extension(".report.json").string(), result.toJson().dump(2) + "\n");
        log("generated d=" + formatNumber(d) + " (achieved " + formatNumber(result.achieved.aggregate.value()) + ")");
        return result.table;
    };

    auto runOne = [&](double d) {
        const auto scenario = bench::buildScenario(original, driftedFor(d), kind, d, sc);
        auto sut = makeSut(cfg, out);
        try {
            return bench::runBenchmark(scenario, *sut, bc);
        } catch (const bench::BenchFailure& f) {
            writeText((out / ("partial_report_d_" + formatNumber(d) + ".json")).string(), f.partial().dump(2) + "\n");
            throw;
        }
    };

    std::vector<double> ds = b.dList;
    std::sort(ds.begin(), ds.end());
    ds.erase(std::unique(ds.begin(), ds.end()), ds.end());
    const bench::MetricReport baseline = runOne(0.0);
    std::vector<bench::MetricReport> reports;
    for (double d : ds) {
        bench::MetricReport r = d == 0.0 ? baseline : runOne(d);
        bench::applyBaseline(r, baseline);
        writeText((out / ("report_d_" + formatNumber(d) + ".json")).string(), r.toJson().dump(2) + "\n");
        reports.push_back(std::move(r));
    }
    const auto summary = bench::aggregateReport(std::move(reports));
    writeText((out / "summary.csv").string(), summary.toCsv());
    writeText((out / "summary.json").string(), summary.toJson().dump(2) + "\n");
    std::cout << summary.toCsv();
    return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string kind, out;
    std::size_t rows = 10000;
    std::size_t templates = 33;
    std::uint64_t seed = 0;
    bool key = false;
};

int runSynth(const SynthArgs& a) {
    if (a.kind == "calibration") {
        writeTable(a.out, synthetic::calibrationTable(a.rows, a.seed, a.key));
    } else if (a.kind == "workload") {
        writeTable(a.out, synthetic::workloadTable(a.rows, a.seed, a.templates).table());
    } else if (a.kind == "oltp") {
        workload::OltpSpec spec;
        spec.transactions = a.rows;
        workload::writeStream(a.out, workload::synthOltpStream(spec, a.seed));
    } else {
        failInput("synth: unknown kind '" + a.kind + "' (expected calibration, workload or oltp)");
    }
    return 0;
}

}// namespace

int main(int argc, char** argv) {
    CLI::App app{"Drift-aware tabular data and workload generation with a benchmark harness"};
    app.require_subcommand(1);

    FitArgs fit;
    auto* fitCmd = app.add_subcommand("fit", "Train a generator (or a snapshot library)");
    fitCmd->add_option("--config", fit.config, "Run config JSON");
    fitCmd->add_option("--table", fit.table, "Training table CSV");
    fitCmd->add_option("--workload", fit.workload, "Workload table CSV");
    fitCmd->add_option("--snapshots", fit.snapshots, "Snapshot CSVs in temporal order")->delimiter(',');
    fitCmd->add_option("--base", fit.base, "Base snapshot id (default: the first)");
    fitCmd->add_option("--out", fit.out, "Checkpoint directory (default: output_dir)");

    DriftArgs drift;
    auto* driftCmd = app.add_subcommand("drift", "Measure the drift factor between two tables");
    driftCmd->add_option("a", drift.a, "First table CSV")->required();
    driftCmd->add_option("b", drift.b, "Second table CSV")->required();
    driftCmd->add_option("--config", drift.config, "Run config JSON");
    driftCmd->add_option("--bins", drift.bins, "Bins per continuous attribute");
    driftCmd->add_option("--smoothing", drift.smoothing, "Probability smoothing before KL");
    driftCmd->add_option("--out", drift.out, "Also write the report here");

    GenArgs gen;
    auto* genCmd = app.add_subcommand("gen", "Generate a drifted table");
    genCmd->add_option("--models", gen.models, "Generator checkpoint directory");
    genCmd->add_option("--library", gen.library, "Snapshot library manifest (library.json)");
    genCmd->add_option("--original", gen.original, "Original table CSV");
    genCmd->add_option("--d", gen.d, "Target drift factor")->required()->check(CLI::Range(0.0, 1.0));
    genCmd->add_option("--n", gen.n, "Rows to generate (default: as many as the original)");
    genCmd->add_option("--seed", gen.seed, "Sampling seed (default: seeds.sampling)");
    genCmd->add_option("--scale", gen.scale, "Override the guidance scale");
    genCmd->add_option("--mode", gen.mode, "Guidance mode: gaussian_surrogate or backprop_potential");
    genCmd->add_option("--out", gen.out, "Output CSV")->required();
    genCmd->add_option("--report", gen.report, "Report JSON (default: <out>.report.json)");
    genCmd->add_option("--config", gen.config, "Run config JSON");
    genCmd->add_option("--render", gen.render, "Render spec JSON for --stream");
    genCmd->add_option("--stream", gen.stream, "Also write the realized query stream (JSON lines)");

    BenchArgs bench;
    auto* benchCmd = app.add_subcommand("bench", "Run drift scenarios against a system under test");
    benchCmd->add_option("--config", bench.config, "Run config JSON");
    benchCmd->add_option("--scenario", bench.scenario, "train_drifted_test_original or drift_back_insert");
    benchCmd->add_option("--sut", bench.sut, "plr, hist or extern");
    benchCmd->add_option("--sut-cmd", bench.sutCmd, "Command for --sut extern");
    benchCmd->add_option("--d-list", bench.dList, "Comma-separated drift factors");
    benchCmd->add_option("--original", bench.original, "Original table CSV");
    benchCmd->add_option("--models", bench.models, "Generator checkpoint for missing drifted tables");
    benchCmd->add_option("--drifted", bench.drifted, "Precomputed drifted table as d=path (repeatable)");
    benchCmd->add_option("--test-ops", bench.testOps, "Size of the fixed test set");
    benchCmd->add_option("--cost-mode", bench.costMode, "units or wall_clock");
    benchCmd->add_option("--out", bench.out, "Output directory (default: output_dir)");

    SynthArgs synth;
    auto* synthCmd = app.add_subcommand("synth", "Write a seeded synthetic table or operation stream");
    synthCmd->add_option("kind", synth.kind, "calibration, workload or oltp")->required();
    synthCmd->add_option("--rows", synth.rows, "Rows (transactions for oltp)");
    synthCmd->add_option("--templates", synth.templates, "Join patterns in the workload table");
    synthCmd->add_option("--seed", synth.seed, "Seed");
    synthCmd->add_flag("--key", synth.key, "Add an integer id key column");
    synthCmd->add_option("--out", synth.out, "Output path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ErrorKind::kInput);
    }

    try {
        if (*fitCmd) return runFit(fit);
        if (*driftCmd) return runDrift(drift);
        if (*genCmd) return runGen(gen);
        if (*benchCmd) return runBench(bench);
        if (*synthCmd) return runSynth(synth);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exitCode();
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ErrorKind::kInput);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ErrorKind::kRuntime);
    }
    return 0;
}
