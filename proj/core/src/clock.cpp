#include "nexus/clock.hpp"

#include <chrono>

namespace nexus {

std::int64_t SystemClock::now_unix_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

} // namespace nexus
