#include "nexus/qc.hpp"

#include "nexus/error.hpp"
#include "nexus/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

using nlohmann::json;

namespace nexus {

Direction direction_from_string(const std::string& text) {
    std::string t = to_lower(text);
    if (t == "high_bad")
        return Direction::high_bad;
    if (t == "low_bad")
        return Direction::low_bad;
    if (t == "both")
        return Direction::both;
    fail(Errc::parse_error, "unknown direction '" + text + "'");
}

const char* direction_to_string(Direction direction) {
    switch (direction) {
    case Direction::high_bad: return "high_bad";
    case Direction::low_bad: return "low_bad";
    case Direction::both: return "both";
    }
    return "?";
}

const char* verdict_to_string(Verdict verdict) {
    return verdict == Verdict::acceptable ? "ACCEPTABLE" : "REJECTED";
}

const char* outcome_to_string(SubjectOutcome outcome) {
    return outcome == SubjectOutcome::pass ? "PASS" : "FAIL";
}

namespace {

std::vector<std::string> split_tsv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    for (char c : line) {
        if (c == '\t') {
            cells.push_back(cell);
            cell.clear();
        } else if (c != '\r') {
            cell.push_back(c);
        }
    }
    cells.push_back(cell);
    return cells;
}

std::vector<MetricVector> ingest_tsv(const std::filesystem::path& path, const std::string& step) {
    std::ifstream in(path);
    if (!in)
        fail(Errc::io_failure, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line))
        fail(Errc::parse_error, path.string() + ": empty table");
    std::vector<std::string> header = split_tsv_line(line);
    std::size_t subject_col = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "subject_id")
            subject_col = i;
    }
    if (subject_col == header.size())
        fail(Errc::no_subject_column, path.string() + ": header lacks subject_id");
    if (header.size() < 2)
        fail(Errc::parse_error, path.string() + ": no metric columns");

    std::vector<MetricVector> rows;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::vector<std::string> cells = split_tsv_line(line);
        if (cells.size() != header.size())
            fail(Errc::parse_error, path.string() + ": row width mismatch");
        MetricVector row;
        row.step = step;
        row.subject = cells[subject_col];
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i == subject_col)
                continue;
            if (cells[i].empty()) {
                row.missing.insert(header[i]);
                continue;
            }
            try {
                row.metrics[header[i]] = std::stod(cells[i]);
            } catch (const std::exception&) {
                fail(Errc::parse_error,
                     path.string() + ": non-numeric cell '" + cells[i] + "' in " + header[i]);
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<MetricVector> ingest_json(const std::filesystem::path& path, const std::string& step) {
    json records;
    try {
        records = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        fail(Errc::parse_error, path.string() + ": " + e.what());
    }
    if (!records.is_array())
        fail(Errc::parse_error, path.string() + ": expected a JSON array of rows");
    std::vector<MetricVector> rows;
    for (const auto& record : records) {
        if (!record.contains("subject_id"))
            fail(Errc::no_subject_column, path.string() + ": row lacks subject_id");
        MetricVector row;
        row.step = step;
        row.subject = record.at("subject_id").get<std::string>();
        for (auto& [key, value] : record.items()) {
            if (key == "subject_id")
                continue;
            if (value.is_null())
                row.missing.insert(key);
            else
                row.metrics[key] = value.get<double>();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

std::vector<MetricVector> ingest_metric_table(const std::filesystem::path& path,
                                              const std::string& step) {
    if (path.extension() == ".json")
        return ingest_json(path, step);
    return ingest_tsv(path, step);
}

std::pair<double, double> tukey_hinges(std::vector<double> sorted_values) {
    const std::size_t n = sorted_values.size();
    auto median_of = [&](std::size_t lo, std::size_t hi) { // [lo, hi)
        std::size_t len = hi - lo;
        std::size_t mid = lo + len / 2;
        if (len % 2 == 1)
            return sorted_values[mid];
        return (sorted_values[mid - 1] + sorted_values[mid]) / 2.0;
    };
    std::size_t half = n / 2;
    double q1, q3;
    if (n % 2 == 0) {
        q1 = median_of(0, half);
        q3 = median_of(half, n);
    } else {
        // odd: both halves include the median
        q1 = median_of(0, half + 1);
        q3 = median_of(half, n);
    }
    return {q1, q3};
}

std::set<std::string> screen_iqr(const std::map<std::string, double>& values, double multiplier,
                                 Direction direction) {
    if (values.size() < 4)
        fail(Errc::too_few_values, "IQR screening needs >= 4 values, got " +
                                       std::to_string(values.size()));
    std::vector<double> sorted;
    sorted.reserve(values.size());
    for (const auto& [subject, value] : values)
        sorted.push_back(value);
    std::sort(sorted.begin(), sorted.end());
    auto [q1, q3] = tukey_hinges(std::move(sorted));
    double iqr = q3 - q1;
    double lo = q1 - multiplier * iqr;
    double hi = q3 + multiplier * iqr;

    std::set<std::string> flagged;
    for (const auto& [subject, value] : values) {
        bool low = value < lo;
        bool high = value > hi;
        bool hit = false;
        switch (direction) {
        case Direction::both: hit = low || high; break;
        case Direction::low_bad: hit = low; break;
        case Direction::high_bad: hit = high; break;
        }
        if (hit)
            flagged.insert(subject);
    }
    return flagged;
}

std::set<std::string> screen_topk(const std::map<std::string, double>& values, double fraction,
                                  Direction direction) {
    if (values.empty())
        return {};
    if (!(fraction > 0.0) || fraction > 1.0)
        fail(Errc::parse_error, "fraction must be in (0, 1]");

    const std::size_t n = values.size();
    std::size_t k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
    k = std::min(k, n);

    double median = 0;
    if (direction == Direction::both) {
        std::vector<double> sorted;
        sorted.reserve(n);
        for (const auto& [subject, value] : values)
            sorted.push_back(value);
        std::sort(sorted.begin(), sorted.end());
        median = n % 2 == 1 ? sorted[n / 2] : (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0;
    }

    // abnormality score: larger = worse
    std::vector<std::pair<double, std::string>> ranked;
    ranked.reserve(n);
    for (const auto& [subject, value] : values) {
        double score = 0;
        switch (direction) {
        case Direction::low_bad: score = -value; break;
        case Direction::high_bad: score = value; break;
        case Direction::both: score = std::abs(value - median); break;
        }
        ranked.emplace_back(score, subject);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first)
            return a.first > b.first;
        return a.second < b.second; // tie-break: subject id ascending
    });

    std::set<std::string> flagged;
    for (std::size_t i = 0; i < k; ++i)
        flagged.insert(ranked[i].second);
    return flagged;
}

SubjectVerdict aggregate_subject_verdicts(const std::string& subject,
                                          const std::map<std::string, StepEvidence>& per_step) {
    if (per_step.empty())
        fail(Errc::no_steps, "subject '" + subject + "' has no step verdicts");
    SubjectVerdict verdict;
    verdict.subject = subject;
    verdict.evidence.per_step = per_step;
    std::ostringstream summary;
    for (const auto& [step, evidence] : per_step) {
        if (evidence.verdict.verdict == Verdict::rejected) {
            if (evidence.verdict.reject_reason.empty())
                fail(Errc::malformed_judge_output, "rejected step '" + step + "' has no reason");
            verdict.y = SubjectOutcome::fail;
            if (summary.tellp() > 0)
                summary << "; ";
            summary << step << ": " << evidence.verdict.reject_reason;
        }
    }
    verdict.evidence.summary =
        verdict.y == SubjectOutcome::pass ? "all steps acceptable" : summary.str();
    return verdict;
}

Direction default_direction(const std::string& metric_name) {
    static const std::set<std::string> low_bad = {
        "dice", "nmi",     "ncc",    "cnr",    "fber",   "snr",     "snr_csf", "snr_gm",
        "snr_total", "snr_wm", "snrd_csf", "snrd_gm", "snrd_total", "snrd_wm", "tsnr",
    };
    static const std::set<std::string> high_bad = {
        "fd_mean", "fd_num", "fd_perc", "cjv",        "efc",      "inu_range",
        "aor",     "aqi",    "dvars_nstd", "dvars_std", "dvars_vstd", "gcor",
    };
    if (low_bad.count(metric_name))
        return Direction::low_bad;
    if (high_bad.count(metric_name))
        return Direction::high_bad;
    return Direction::both;
}

} // namespace nexus
