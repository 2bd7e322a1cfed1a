#include "nexus/registry.hpp"

#include "nexus/error.hpp"
#include "nexus/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>

using nlohmann::json;

namespace nexus {

Family family_from_string(const std::string& text) {
    std::string t = to_lower(text);
    if (t == "processing")
        return Family::processing;
    if (t == "qc")
        return Family::qc;
    if (t == "analysis")
        return Family::analysis;
    fail(Errc::parse_error, "unknown family '" + text + "'");
}

const char* family_to_string(Family family) {
    switch (family) {
    case Family::processing: return "processing";
    case Family::qc: return "qc";
    case Family::analysis: return "analysis";
    }
    return "?";
}

namespace {

bool valid_name(const std::string& name) {
    if (name.empty())
        return false;
    for (char c : name) {
        bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
        if (!ok)
            return false;
    }
    return true;
}

} // namespace

PrimitiveCard validate_card(PrimitiveCard raw) {
    if (raw.name.empty())
        fail(Errc::missing_field, "name");
    if (!valid_name(raw.name))
        fail(Errc::invalid_name, "'" + raw.name + "' does not match [a-z0-9_]+");
    if (raw.module.empty())
        fail(Errc::missing_field, "module (card '" + raw.name + "')");
    if (raw.description.empty())
        fail(Errc::missing_field, "description (card '" + raw.name + "')");
    if (raw.detailed_schema.empty())
        fail(Errc::empty_schema, "card '" + raw.name + "' has no detailed_schema");
    return raw;
}

PrimitiveCard card_from_json(const std::string& json_text, Family fallback_family) {
    json record;
    try {
        record = json::parse(json_text);
    } catch (const json::exception& e) {
        fail(Errc::parse_error, e.what());
    }
    if (!record.is_object())
        fail(Errc::parse_error, "card record must be a JSON object");

    PrimitiveCard card;
    card.family = fallback_family;
    json extras = json::object();
    for (auto& [key, value] : record.items()) {
        if (key == "name")
            card.name = value.is_string() ? value.get<std::string>() : "";
        else if (key == "module")
            card.module = value.is_string() ? value.get<std::string>() : "";
        else if (key == "description")
            card.description = value.is_string() ? value.get<std::string>() : "";
        else if (key == "detailed_schema")
            card.detailed_schema = value.is_string() ? value.get<std::string>() : "";
        else if (key == "family")
            card.family = family_from_string(value.get<std::string>());
        else if (key == "command_template")
            card.command_template = value.is_string() ? value.get<std::string>() : "";
        else
            extras[key] = value; // preserved but ignored
    }
    if (!record.contains("name"))
        fail(Errc::missing_field, "name");
    if (!record.contains("module"))
        fail(Errc::missing_field, "module");
    if (!record.contains("description"))
        fail(Errc::missing_field, "description");
    if (!extras.empty())
        card.extras_json = extras.dump();
    return validate_card(std::move(card));
}

PrimitiveCard parse_card_file(const std::filesystem::path& path) {
    Family fallback = Family::processing;
    if (path.has_parent_path()) {
        std::string dir = path.parent_path().filename().string();
        if (dir == "processing" || dir == "qc" || dir == "analysis")
            fallback = family_from_string(dir);
    }
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const Error&) {
        fail(Errc::parse_error, "unreadable card file " + path.string());
    }
    try {
        return card_from_json(text, fallback);
    } catch (const Error& e) {
        if (e.code() == Errc::parse_error)
            fail(Errc::parse_error, path.string() + ": " + e.what());
        throw;
    }
}

Registry Registry::from_cards(std::vector<PrimitiveCard> cards) {
    for (auto& card : cards)
        card = validate_card(std::move(card));
    std::sort(cards.begin(), cards.end(),
              [](const PrimitiveCard& a, const PrimitiveCard& b) { return a.name < b.name; });
    for (std::size_t i = 1; i < cards.size(); ++i) {
        if (cards[i].name == cards[i - 1].name)
            fail(Errc::duplicate_name, cards[i].name);
    }
    Registry registry;
    registry.cards_ = std::move(cards);
    return registry;
}

const PrimitiveCard* Registry::find(const std::string& name) const {
    auto it = std::lower_bound(
        cards_.begin(), cards_.end(), name,
        [](const PrimitiveCard& card, const std::string& n) { return card.name < n; });
    if (it == cards_.end() || it->name != name)
        return nullptr;
    return &*it;
}

const PrimitiveCard& Registry::lookup(const std::string& name) const {
    const PrimitiveCard* card = find(name);
    if (!card)
        fail(Errc::not_found, "no primitive named '" + name + "'");
    return *card;
}

Registry load_registry(const std::vector<std::filesystem::path>& card_files) {
    std::vector<PrimitiveCard> cards;
    cards.reserve(card_files.size());
    for (const auto& path : card_files)
        cards.push_back(parse_card_file(path));
    return Registry::from_cards(std::move(cards));
}

Registry load_card_dir(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir))
        fail(Errc::parse_error, "card directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return load_registry(files);
}

std::vector<CompactIndexEntry> compact_index(const Registry& registry) {
    std::vector<CompactIndexEntry> index;
    index.reserve(registry.size());
    for (const auto& card : registry.cards())
        index.push_back({card.name, card.description});
    return index;
}

std::vector<PrimitiveCard> list_by_family(const Registry& registry, Family family) {
    std::vector<PrimitiveCard> out;
    for (const auto& card : registry.cards()) {
        if (card.family == family)
            out.push_back(card);
    }
    return out;
}

std::string render_card(const PrimitiveCard& card) {
    std::string out;
    out += "## " + card.name + "\n";
    out += "module: " + card.module + "\n";
    out += "description: " + card.description + "\n";
    out += "detailed_schema:\n" + card.detailed_schema + "\n";
    return out;
}

std::string render_index_entry(const CompactIndexEntry& entry) {
    return "- " + entry.name + ": " + entry.description + "\n";
}

} // namespace nexus
