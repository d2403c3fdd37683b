#include "trellis/types.hpp"

namespace trellis {

std::optional<size_t> first_config_index(const EntrySeq& s) {
    for (size_t i = 0; i < s.size(); ++i)
        if (s[i].is_config()) return i;
    return std::nullopt;
}

bool is_prefix(const EntrySeq& a, const EntrySeq& b) {
    if (a.size() > b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (!(a[i] == b[i])) return false;
    return true;
}

}  // namespace trellis
