#pragma once

#include <cstddef>
#include <string>

namespace psic {

// Process-wide warning sink. Warnings go to stderr unless silenced; the
// count is kept either way so callers and tests can observe them. A
// message identical to one already printed is counted but not repeated.
void warn(const std::string& message);
std::size_t warning_count();
void set_warnings_silenced(bool silenced);

}  // namespace psic
