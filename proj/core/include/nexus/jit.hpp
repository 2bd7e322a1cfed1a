#pragma once

#include "nexus/registry.hpp"

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace nexus {

/// Input to one tool-selection call: a supervisor-issued instruction plus the
/// compact (name, description) index of the owning agent's library.
struct SelectionRequest {
    std::string instruction;
    std::vector<CompactIndexEntry> index;
};

/// Result of a selection: the chosen subset P_I and the text block whose full
/// schemas are injected into the agent context. Contains the schema of every
/// selected card and of no other.
struct SelectionResult {
    std::vector<std::string> selected_names;
    std::string rationale;
    std::string injected_context;
};

/// External selection policy (e.g. a model call) proposing names from the
/// index. select_tools re-validates whatever it returns.
using SelectPolicy = std::function<std::vector<std::string>(const SelectionRequest&)>;

inline constexpr std::size_t kNoSelectionCap = std::numeric_limits<std::size_t>::max();

/// Deterministic fallback ranking: case-folded token-overlap between the
/// instruction and each entry's name+description. An instruction token counts
/// once per occurrence when it appears among the entry's tokens; ties break
/// lexicographically by name. Returns min(k, |index|) entries.
std::vector<std::pair<std::string, int>> lexical_rank(const std::string& instruction,
                                                      const std::vector<CompactIndexEntry>& index,
                                                      std::size_t k);

/// Renders the full schemas of the named cards in lexicographic order.
std::string render_injection(const std::vector<std::string>& selected, const Registry& registry);

/// Eq-2-style selection. With a policy, the proposed names are validated
/// against the index (unknown names are rejected, never passed through).
/// Without one, the lexical ranking selects every positive-score entry, plus
/// any card whose name the instruction mentions verbatim, capped at `max_k`
/// (forced name mentions are never dropped).
SelectionResult select_tools(const SelectionRequest& request, const Registry& registry,
                             const SelectPolicy* policy = nullptr,
                             std::size_t max_k = kNoSelectionCap);

} // namespace nexus
