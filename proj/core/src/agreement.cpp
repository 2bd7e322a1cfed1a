#include "nexus/agreement.hpp"

#include "nexus/error.hpp"
#include "nexus/util.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace nexus {

Label label_from_string(const std::string& text) {
    std::string t = to_lower(text);
    if (t == "pass")
        return Label::pass;
    if (t == "fail")
        return Label::fail;
    fail(Errc::parse_error, "label must be PASS or FAIL, got '" + text + "'");
}

const char* label_to_string(Label label) {
    return label == Label::pass ? "PASS" : "FAIL";
}

namespace {

void check_pair(std::span<const Label> a, std::span<const Label> b) {
    if (a.size() != b.size())
        fail(Errc::length_mismatch, std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    if (a.empty())
        fail(Errc::empty_input, "rating vectors must be non-empty");
}

} // namespace

double observed_agreement(std::span<const Label> a, std::span<const Label> b) {
    check_pair(a, b);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i])
            ++agree;
    }
    return static_cast<double>(agree) / static_cast<double>(a.size());
}

Ac1Result gwet_ac1(std::span<const Label> a, std::span<const Label> b) {
    check_pair(a, b);
    const double n = static_cast<double>(a.size());
    double pass_a = 0;
    double pass_b = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == Label::pass)
            ++pass_a;
        if (b[i] == Label::pass)
            ++pass_b;
    }
    Ac1Result r;
    r.po = observed_agreement(a, b);
    r.phat = (pass_a / n + pass_b / n) / 2.0;
    r.pe = 2.0 * r.phat * (1.0 - r.phat);
    r.ac1 = (r.po - r.pe) / (1.0 - r.pe);
    return r;
}

AgreementReport mean_agreement_report(std::span<const Label> system,
                                      const std::array<std::vector<Label>, 3>& raters,
                                      const std::array<std::string, 3>& rater_names) {
    AgreementReport report;
    double sum = 0;
    for (std::size_t i = 0; i < raters.size(); ++i) {
        AgreementPair pair;
        pair.rater_a = "system";
        pair.rater_b = rater_names[i];
        pair.stats = gwet_ac1(system, raters[i]);
        sum += pair.stats.ac1;
        report.pairs.push_back(std::move(pair));
    }
    report.mean_ac1 = sum / static_cast<double>(raters.size());
    return report;
}

std::string render_pass_rate(long pass_count, long total) {
    double pct = total == 0 ? 0.0 : 100.0 * static_cast<double>(pass_count) / static_cast<double>(total);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f%% (%ld/%ld)", pct, pass_count, total);
    return buf;
}

std::vector<PassRate> pass_rate_table(const RatingMatrix& matrix) {
    if (matrix.labels.size() != matrix.raters.size())
        fail(Errc::length_mismatch, "labels rows vs raters");
    std::vector<PassRate> rates;
    for (std::size_t r = 0; r < matrix.raters.size(); ++r) {
        if (matrix.labels[r].size() != matrix.items.size())
            fail(Errc::length_mismatch, "rater '" + matrix.raters[r] + "' item count");
        PassRate rate;
        rate.rater = matrix.raters[r];
        rate.total = static_cast<long>(matrix.items.size());
        for (Label label : matrix.labels[r]) {
            if (label == Label::pass)
                ++rate.pass_count;
        }
        rate.rendered = render_pass_rate(rate.pass_count, rate.total);
        rates.push_back(std::move(rate));
    }
    return rates;
}

std::vector<std::pair<std::string, Label>> read_rating_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        fail(Errc::io_failure, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line))
        fail(Errc::parse_error, path.string() + ": empty file");
    if (!line.empty() && line.back() == '\r')
        line.pop_back();
    if (line != "item_id,label")
        fail(Errc::parse_error, path.string() + ": expected header 'item_id,label'");
    std::vector<std::pair<std::string, Label>> out;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        auto comma = line.find(',');
        if (comma == std::string::npos)
            fail(Errc::parse_error, path.string() + ": bad row '" + line + "'");
        out.emplace_back(line.substr(0, comma), label_from_string(line.substr(comma + 1)));
    }
    return out;
}

std::string render_agreement_tsv(const std::string& checkpoint, const AgreementReport& report) {
    std::ostringstream out;
    out << "checkpoint\trater\tPo\tphat\tPe\tAC1\tmean_AC1\n";
    char buf[64];
    for (const auto& pair : report.pairs) {
        out << checkpoint << '\t' << pair.rater_b << '\t';
        std::snprintf(buf, sizeof(buf), "%.6f\t%.6f\t%.6f\t%.6f\t%.6f", pair.stats.po,
                      pair.stats.phat, pair.stats.pe, pair.stats.ac1, report.mean_ac1);
        out << buf << '\n';
    }
    return out.str();
}

} // namespace nexus
