#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "trellis/checker.hpp"
#include "trellis/sim.hpp"
#include "trellis/trace.hpp"

namespace py = pybind11;
using namespace trellis;

namespace {

py::dict sim_run(const std::string& planText) {
    SimResult res = run_sim(Plan::from_text(planText));
    py::dict out;
    out["trace"] = res.trace.to_text();
    out["quiescent"] = res.quiescent;
    out["end_ms"] = res.endMs;
    out["delivered"] = res.delivered;
    out["dropped"] = res.dropped;
    py::dict counters;
    for (const auto& [k, v] : res.counters) counters[py::str(k)] = v;
    out["counters"] = counters;
    py::dict latency;
    for (const auto& [k, v] : res.latencyByKey) latency[py::str(k)] = v;
    out["latency_by_key"] = latency;
    py::list failed;
    for (const auto& k : res.failedKeys) failed.append(k);
    out["failed_keys"] = failed;
    py::dict trunkLens;
    for (const auto& [node, trunk] : res.trunks) trunkLens[py::str(node.v)] = trunk.size();
    out["trunk_lengths"] = trunkLens;
    return out;
}

py::dict trace_check(const std::string& traceText, const std::vector<std::string>& correct) {
    Trace trace = Trace::from_text(traceText);
    CheckReport report;
    if (correct.empty()) {
        report = check_trace(trace);
    } else {
        std::set<NodeId> ids;
        for (const auto& c : correct) ids.insert(NodeId{c});
        report = check_trace(trace, ids);
    }
    py::dict out;
    out["ok"] = report.ok();
    out["summary"] = report.summary();
    py::list violations;
    for (const auto& v : report.violations) {
        py::dict d;
        d["rule"] = v.rule;
        d["detail"] = v.detail;
        violations.append(d);
    }
    out["violations"] = violations;
    const char* liveness = "inconclusive";
    if (report.liveness == CheckReport::Liveness::Satisfied) liveness = "satisfied";
    if (report.liveness == CheckReport::Liveness::Violated) liveness = "violated";
    out["liveness"] = liveness;
    py::list livenessIssues;
    for (const auto& v : report.livenessIssues) {
        py::dict d;
        d["rule"] = v.rule;
        d["detail"] = v.detail;
        livenessIssues.append(d);
    }
    out["liveness_issues"] = livenessIssues;
    return out;
}

std::string plan_make(uint64_t seed, int nodes, int commands, const std::string& backend,
                      bool speculation) {
    PlanShape shape;
    shape.nodesLo = shape.nodesHi = nodes;
    shape.commands = commands;
    shape.backend = backend;
    shape.speculation = speculation;
    return make_plan(seed, shape).to_text();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "deterministic replication simulator and trace checker";
    m.def("run_sim", &sim_run, py::arg("plan_text"),
          "Execute a plan text under the simulated network and return the run's "
          "trace and statistics.");
    m.def("check_trace", &trace_check, py::arg("trace_text"),
          py::arg("correct") = std::vector<std::string>{},
          "Validate a recorded trace; 'correct' lists node ids assumed to never "
          "fail (default: every node without a crash record).");
    m.def("make_plan", &plan_make, py::arg("seed"), py::arg("nodes") = 3,
          py::arg("commands") = 1000, py::arg("backend") = "paxos",
          py::arg("speculation") = true,
          "Generate a seeded stress plan as text runnable by run_sim.");
    m.attr("__version__") = "0.1.0";
}
