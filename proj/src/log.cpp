#include "psic/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>
#include <set>

namespace psic {

namespace {
std::atomic<std::size_t> g_count{0};
std::atomic<bool> g_silenced{false};
std::mutex g_mutex;
std::set<std::string> g_seen;
}  // namespace

void warn(const std::string& message) {
  ++g_count;
  if (g_silenced) return;
  std::lock_guard lock(g_mutex);
  if (!g_seen.insert(message).second) return;
  std::cerr << "warning: " << message << "\n";
}

std::size_t warning_count() { return g_count; }
void set_warnings_silenced(bool silenced) { g_silenced = silenced; }

}  // namespace psic
