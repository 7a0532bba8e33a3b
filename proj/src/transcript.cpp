#include "fsl/transcript.hpp"

#include <array>
#include <ostream>

namespace fsl {

const char* to_string(MsgKind kind) {
    switch (kind) {
        case MsgKind::feature_up: return "feature_up";
        case MsgKind::smashed_down: return "smashed_down";
        case MsgKind::feature_grad_down: return "feature_grad_down";
        case MsgKind::zo_smashed_down: return "zo_smashed_down";
        case MsgKind::zo_loss_up: return "zo_loss_up";
        case MsgKind::weights_up: return "weights_up";
        case MsgKind::weights_down: return "weights_down";
    }
    return "?";
}

bool is_upstream(MsgKind kind) {
    return kind == MsgKind::feature_up || kind == MsgKind::zo_loss_up ||
           kind == MsgKind::weights_up;
}

void Transcript::record(std::uint32_t round, std::int32_t client, MsgKind kind,
                        std::uint64_t bytes) {
    events_.push_back({round, client, kind, bytes});
}

void Transcript::append(const Transcript& other) {
    events_.insert(events_.end(), other.events_.begin(), other.events_.end());
}

void Transcript::clear() { events_.clear(); }

std::uint64_t Transcript::total_bytes() const {
    std::uint64_t total = 0;
    for (const auto& e : events_) total += e.bytes;
    return total;
}

std::uint64_t Transcript::bytes_matching(MsgKind kind) const {
    std::uint64_t total = 0;
    for (const auto& e : events_) {
        if (e.kind == kind) total += e.bytes;
    }
    return total;
}

void Transcript::write_log(std::ostream& os) const {
    for (const auto& e : events_) {
        os << e.round << ' ' << e.client << ' ' << to_string(e.kind) << ' ' << e.bytes << '\n';
    }
}

void Transcript::write_summary(std::ostream& os) const {
    constexpr std::array<MsgKind, 7> kinds = {
        MsgKind::feature_up,      MsgKind::smashed_down, MsgKind::feature_grad_down,
        MsgKind::zo_smashed_down, MsgKind::zo_loss_up,   MsgKind::weights_up,
        MsgKind::weights_down,
    };
    for (MsgKind k : kinds) {
        std::size_t count = 0;
        std::uint64_t bytes = 0;
        for (const auto& e : events_) {
            if (e.kind == k) {
                ++count;
                bytes += e.bytes;
            }
        }
        os << to_string(k) << " count " << count << " bytes " << bytes << '\n';
    }
    os << "total count " << events_.size() << " bytes " << total_bytes() << '\n';
}

}  // namespace fsl
