#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace nexus {

/// Binary QC rating.
enum class Label { pass, fail };

Label label_from_string(const std::string& text);
const char* label_to_string(Label label);

struct Ac1Result {
    double po = 0;   // observed agreement
    double phat = 0; // mean PASS proportion over the two raters
    double pe = 0;   // chance agreement, 2*phat*(1-phat)
    double ac1 = 0;  // (po - pe) / (1 - pe)
};

struct AgreementPair {
    std::string rater_a;
    std::string rater_b;
    Ac1Result stats;
};

struct AgreementReport {
    std::vector<AgreementPair> pairs;
    double mean_ac1 = 0;
};

/// items x raters rating matrix with no missing entries.
struct RatingMatrix {
    std::vector<std::string> items;
    std::vector<std::string> raters;
    std::vector<std::vector<Label>> labels; // labels[rater][item]
};

struct PassRate {
    std::string rater;
    long pass_count = 0;
    long total = 0;
    std::string rendered; // "P% (n/N)"
};

/// Fraction of positions on which the two raters agree.
double observed_agreement(std::span<const Label> a, std::span<const Label> b);

/// Chance-corrected agreement for binary labels. The denominator 1-Pe is
/// always >= 0.5 in the binary case, so there is no singularity.
Ac1Result gwet_ac1(std::span<const Label> a, std::span<const Label> b);

/// One pair per human rater (system vs rater), plus the arithmetic mean AC1.
AgreementReport mean_agreement_report(std::span<const Label> system,
                                      const std::array<std::vector<Label>, 3>& raters,
                                      const std::array<std::string, 3>& rater_names = {
                                          "rater1", "rater2", "rater3"});

/// Per-rater PASS percentage in "P% (n/N)" form, one decimal.
std::vector<PassRate> pass_rate_table(const RatingMatrix& matrix);

std::string render_pass_rate(long pass_count, long total);

/// Reads a rating file: CSV with header `item_id,label`, label in {PASS, FAIL}.
std::vector<std::pair<std::string, Label>> read_rating_csv(const std::filesystem::path& path);

/// Tab-separated agreement report: checkpoint, rater, Po, phat, Pe, AC1, mean_AC1.
std::string render_agreement_tsv(const std::string& checkpoint, const AgreementReport& report);

} // namespace nexus
