#include <gtest/gtest.h>

#include <driftforge/tabular.hpp>

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <sys/wait.h>

using namespace driftforge;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
    const auto dir = fs::temp_directory_path() / "driftforge_unit" / "cli";
    fs::create_directories(dir);
    return dir;
}

int run(const std::string& args, const fs::path& stdoutPath) {
    const std::string cmd = std::string(DRIFTFORGE_CLI) + " " + args + " > " + stdoutPath.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json driftOf(const fs::path& a, const fs::path& b) {
    const auto out = scratch() / "drift.json";
    EXPECT_EQ(run("drift " + a.string() + " " + b.string(), out), 0);
    return nlohmann::json::parse(csv::readFile(out.string()));
}

}// namespace

TEST(Cli, DriftOfTableWithItselfIsZero) {
    const auto a = scratch() / "self.csv";
    writeText(a.string(), "x,c\n1.5,A\n2.5,B\n9,A\n");
    EXPECT_EQ(driftOf(a, a)["d"].get<double>(), 0.0);
}

TEST(Cli, TwoCategoryWorkedExample) {
    const auto a = scratch() / "two_a.csv";
    const auto b = scratch() / "two_b.csv";
    writeText(a.string(), "c\nA\nB\n");
    writeText(b.string(), "c\nA\nA\n");
    EXPECT_NEAR(driftOf(a, b)["d"].get<double>(), 0.311278, 1e-6);
}

TEST(Cli, ExitCodes) {
    const auto cfg = scratch() / "bad.json";
    writeText(cfg.string(), R"({"bench": {"colour": 1}})");
    const auto a = scratch() / "self.csv";
    writeText(a.string(), "x\n1\n2\n");
    const auto out = scratch() / "err.txt";
    EXPECT_EQ(run("drift " + a.string() + " " + a.string() + " --config " + cfg.string(), out), 2);
    EXPECT_NE(csv::readFile(out.string()).find("bench.colour"), std::string::npos);
    EXPECT_EQ(run("drift " + a.string() + " " + (scratch() / "missing.csv").string(), out), 2);
    EXPECT_EQ(run("nonsense", out), 2);
}
