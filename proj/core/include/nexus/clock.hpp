#pragma once

#include <cstdint>

namespace nexus {

/// Injected time source. Episodes, ledgers and budgets never read the system
/// clock directly; replay determinism depends on it.
class Clock {
public:
    virtual ~Clock() = default;
    virtual std::int64_t now_unix_ms() = 0;
};

class SystemClock final : public Clock {
public:
    std::int64_t now_unix_ms() override;
};

/// Deterministic clock: starts at `start_ms` and advances by `tick_ms` after
/// every read. A large tick simulates long wall-clock spans in tests.
class ManualClock final : public Clock {
public:
    explicit ManualClock(std::int64_t start_ms, std::int64_t tick_ms = 0)
        : now_(start_ms), tick_(tick_ms) {}

    std::int64_t now_unix_ms() override {
        std::int64_t t = now_;
        now_ += tick_;
        return t;
    }

    void advance(std::int64_t ms) { now_ += ms; }
    std::int64_t peek() const { return now_; }

private:
    std::int64_t now_;
    std::int64_t tick_;
};

} // namespace nexus
