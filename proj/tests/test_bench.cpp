#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "doctest.h"
#include "trellis/bench.hpp"

using namespace trellis;
using namespace trellis::bench;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("trellis_bench_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

}  // namespace

TEST_CASE("csv files get a header, comma-joined rows and a trailing newline") {
    TempDir tmp;
    fs::path p = tmp.path / "out.csv";
    emit_csv(p.string(), "a,b", {{"1", "2"}, {"x", "y"}});
    CHECK(slurp(p) == "a,b\n1,2\nx,y\n");
    emit_csv(p.string(), "only", {});
    CHECK(slurp(p) == "only\n");
}

TEST_CASE("zero-duration experiments leave header-only csv files") {
    TempDir tmp;
    LoadSpec load;
    load.durationMs = 0;

    BaselineResult base = run_baseline(tmp.path.string(), load, {1, 2});
    CHECK(base.points.empty());
    CHECK(slurp(tmp.path / "baseline.csv") == "threads,throughput_cps,p50_ms,p95_ms,p99_ms\n");

    auto sweep = run_recon_sweep(tmp.path.string(), load, {0, 5});
    CHECK(sweep.empty());
    CHECK(slurp(tmp.path / "recon_sweep.csv") ==
          "recons_per_sec,throughput_cps,p50_ms,p95_ms,p99_ms,degradation_pct,trace_ok\n");
}

TEST_CASE("the latency series brackets the reconfiguration for both modes") {
    TempDir tmp;
    auto pts = run_latency_around_recon(tmp.path.string(), 20);
    REQUIRE_FALSE(pts.empty());

    std::map<bool, std::map<int, double>> byMode;
    for (const auto& p : pts) {
        CHECK(p.latencyMs > 0);
        byMode[p.speculation][p.offset] = p.latencyMs;
    }
    REQUIRE(byMode.count(true));
    REQUIRE(byMode.count(false));
    for (auto& [mode, series] : byMode) {
        CHECK(series.size() == 60);
        CHECK(series.begin()->first == -30);
        CHECK(series.rbegin()->first == 29);
    }

    std::string csv = slurp(tmp.path / "latency.csv");
    CHECK(csv.rfind("offset,speculation,latency_ms\n", 0) == 0);
    CHECK(csv.find(",on,") != std::string::npos);
    CHECK(csv.find(",off,") != std::string::npos);
}
