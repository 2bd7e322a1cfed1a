#include "nexus/jit.hpp"

#include "nexus/error.hpp"
#include "nexus/util.hpp"

#include <algorithm>
#include <set>
#include <unordered_set>

namespace nexus {

std::vector<std::pair<std::string, int>> lexical_rank(const std::string& instruction,
                                                      const std::vector<CompactIndexEntry>& index,
                                                      std::size_t k) {
    std::vector<std::string> instr_tokens = tokenize(instruction);
    std::vector<std::pair<std::string, int>> scored;
    scored.reserve(index.size());
    for (const auto& entry : index) {
        std::vector<std::string> entry_tokens = tokenize(entry.name + " " + entry.description);
        std::unordered_set<std::string> entry_set(entry_tokens.begin(), entry_tokens.end());
        int score = 0;
        for (const auto& token : instr_tokens) {
            if (entry_set.count(token))
                ++score;
        }
        scored.emplace_back(entry.name, score);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second)
            return a.second > b.second;
        return a.first < b.first;
    });
    if (scored.size() > k)
        scored.resize(k);
    return scored;
}

std::string render_injection(const std::vector<std::string>& selected, const Registry& registry) {
    std::set<std::string> names(selected.begin(), selected.end());
    std::string block;
    for (const auto& name : names) {
        block += render_card(registry.lookup(name)); // throws NotFound for unknown names
        block += "\n";
    }
    return block;
}

SelectionResult select_tools(const SelectionRequest& request, const Registry& registry,
                             const SelectPolicy* policy, std::size_t max_k) {
    if (request.instruction.empty())
        fail(Errc::policy_failure, "empty instruction");

    std::unordered_set<std::string> index_names;
    for (const auto& entry : request.index) {
        if (!registry.contains(entry.name))
            fail(Errc::unknown_name, "index entry '" + entry.name + "' not in registry");
        index_names.insert(entry.name);
    }

    SelectionResult result;
    if (policy) {
        std::vector<std::string> proposed;
        try {
            proposed = (*policy)(request);
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            fail(Errc::policy_failure, e.what());
        }
        std::unordered_set<std::string> seen;
        for (const auto& name : proposed) {
            if (!index_names.count(name))
                fail(Errc::unknown_name, "policy selected '" + name + "' which is not in the index");
            if (seen.insert(name).second)
                result.selected_names.push_back(name);
        }
        result.rationale = "policy selection";
    } else {
        // Verbatim name mentions are always included, regardless of score.
        std::vector<std::string> forced;
        for (const auto& entry : request.index) {
            if (contains_word(request.instruction, entry.name))
                forced.push_back(entry.name);
        }
        std::sort(forced.begin(), forced.end());
        std::unordered_set<std::string> chosen(forced.begin(), forced.end());
        result.selected_names = forced;

        for (const auto& [name, score] : lexical_rank(request.instruction, request.index,
                                                      request.index.size())) {
            if (result.selected_names.size() >= max_k && max_k != kNoSelectionCap)
                break;
            if (score > 0 && chosen.insert(name).second)
                result.selected_names.push_back(name);
        }
        result.rationale = "lexical token-overlap selection";
    }

    result.injected_context = render_injection(result.selected_names, registry);
    return result;
}

} // namespace nexus
