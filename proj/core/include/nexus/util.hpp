#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace nexus {

/// SHA-256 hex digest; used for the trace ledger's chained checksums.
std::string sha256_hex(std::string_view data);

/// Case-folded tokens split on non-alphanumeric characters. No stemming.
std::vector<std::string> tokenize(std::string_view text);

std::string to_lower(std::string_view text);

/// Whole-word occurrence check over [a-z0-9_] word characters, case-folded.
bool contains_word(std::string_view haystack, std::string_view word);

std::string read_text_file(const std::filesystem::path& path);

/// Write via temp file + rename so readers never observe partial output.
void write_text_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Deterministic cross-platform PRNG (xorshift-multiply); std distributions
/// are implementation-defined and would break golden fixtures.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform-ish integer in [0, bound); bound must be > 0.
    std::uint64_t below(std::uint64_t bound) { return next() % bound; }

    /// Uniform-ish double in [0, 1).
    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

} // namespace nexus
