#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace fsl {

// Every payload that would cross the client/server wire in a real deployment,
// so tests can hold the byte counters against the analytic formula.
enum class MsgKind {
    feature_up,         // intermediate feature h, client -> server
    smashed_down,       // smashed feature b, server -> client
    feature_grad_down,  // dL/dh, server -> client
    zo_smashed_down,    // perturbed smashed feature, server -> client
    zo_loss_up,         // scalar loss at a perturbed point, client -> server
    weights_up,         // head/tail (or full model) weights, client -> server
    weights_down,       // averaged weights broadcast, server -> client
};

const char* to_string(MsgKind kind);
bool is_upstream(MsgKind kind);

struct TranscriptEvent {
    std::uint32_t round = 0;
    std::int32_t client = -1;
    MsgKind kind = MsgKind::feature_up;
    std::uint64_t bytes = 0;
};

// Append-only event log. Concurrent client pipelines record into private
// Transcripts that are merged in ascending client order afterwards, keeping
// the log deterministic.
class Transcript {
public:
    void record(std::uint32_t round, std::int32_t client, MsgKind kind, std::uint64_t bytes);
    void append(const Transcript& other);
    void clear();

    const std::vector<TranscriptEvent>& events() const { return events_; }
    std::size_t count() const { return events_.size(); }
    std::uint64_t total_bytes() const;
    std::uint64_t bytes_matching(MsgKind kind) const;

    // One line per event: "round client kind bytes".
    void write_log(std::ostream& os) const;
    // Per-kind event counts and byte totals.
    void write_summary(std::ostream& os) const;

private:
    std::vector<TranscriptEvent> events_;
};

}  // namespace fsl
