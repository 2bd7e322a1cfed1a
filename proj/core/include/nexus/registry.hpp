#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace nexus {

/// The three primitive families; every card belongs to exactly one.
enum class Family { processing, qc, analysis };

Family family_from_string(const std::string& text);
const char* family_to_string(Family family);

/// Schema-bearing description of one atomic domain operation. Cards wrap
/// external tools; the kernel never re-implements the wrapped numerics.
struct PrimitiveCard {
    std::string name;            // [a-z0-9_]+, unique per registry
    std::string module;          // opaque locator (import/command path)
    std::string description;     // one-line summary
    std::string detailed_schema; // free-text parameter/output/side-effect spec
    Family family = Family::processing;
    std::string command_template; // optional; {placeholder} slots
    std::string extras_json;      // unknown card-file fields, preserved verbatim
};

/// Index entry without any schema text; what selectors see by default.
struct CompactIndexEntry {
    std::string name;
    std::string description;
};

/// Immutable, name-keyed card collection. Iteration order is lexicographic
/// by name, so every derived rendering is deterministic.
class Registry {
public:
    Registry() = default;

    /// Validates every card, rejects duplicates, sorts by name.
    static Registry from_cards(std::vector<PrimitiveCard> cards);

    const PrimitiveCard& lookup(const std::string& name) const;
    const PrimitiveCard* find(const std::string& name) const;
    bool contains(const std::string& name) const { return find(name) != nullptr; }

    const std::vector<PrimitiveCard>& cards() const { return cards_; }
    std::size_t size() const { return cards_.size(); }
    bool empty() const { return cards_.empty(); }

private:
    std::vector<PrimitiveCard> cards_; // sorted by name
};

/// Checks all card invariants; returns the normalized card.
/// Idempotent: validating an already-valid card returns an equal card.
PrimitiveCard validate_card(PrimitiveCard raw);

/// Parses one JSON card record. `fallback_family` applies when the record
/// omits the `family` key (e.g. inferred from the directory it came from).
PrimitiveCard card_from_json(const std::string& json_text, Family fallback_family);

PrimitiveCard parse_card_file(const std::filesystem::path& path);

Registry load_registry(const std::vector<std::filesystem::path>& card_files);

/// Loads `dir/<family>/<name>.json`; family defaults from the subdirectory.
Registry load_card_dir(const std::filesystem::path& dir);

std::vector<CompactIndexEntry> compact_index(const Registry& registry);

std::vector<PrimitiveCard> list_by_family(const Registry& registry, Family family);

/// Full textual rendering of a card (name, module, description, schema).
std::string render_card(const PrimitiveCard& card);

/// Compact rendering of an index entry (no schema text).
std::string render_index_entry(const CompactIndexEntry& entry);

} // namespace nexus
