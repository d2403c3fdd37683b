#pragma once

#include <set>
#include <string>
#include <vector>

#include "trellis/trace.hpp"

namespace trellis {

struct CheckIssue {
    std::string rule;    // well-formedness, integrity, no-duplication, linearizability, liveness
    std::string detail;
};

struct CheckReport {
    enum class Liveness { Satisfied, Violated, Inconclusive };

    std::vector<CheckIssue> violations;  // safety and well-formedness findings
    Liveness liveness = Liveness::Inconclusive;
    std::vector<CheckIssue> livenessIssues;

    bool ok() const { return violations.empty() && liveness != Liveness::Violated; }
    std::string summary() const;
};

// Validates a recorded run against the interface contract:
//   well-formedness  inputs are unique and respect readiness, output
//                    sequence numbers are gapless per node
//   integrity        every learn, new-configuration, and ready output is
//                    justified by a matching earlier input
//   no-duplication   no node repeats an output for the same id
//   linearizability  all nodes' ordered outputs are prefix-comparable
//   liveness         judged only on quiescent traces; with the run settled,
//                    commands proposed into the final configuration by
//                    correct nodes reached every correct member,
//                    reconfiguration requests resolved to a successor that
//                    every correct affected member installed, and readiness
//                    reached the targets it was promised to
//
// correct: nodes assumed to never fail. Defaults to every node in the
// header minus those with a crash record.
CheckReport check_trace(const Trace& trace);
CheckReport check_trace(const Trace& trace, const std::set<NodeId>& correct);

}  // namespace trellis
