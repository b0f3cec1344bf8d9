#pragma once

#include <stdexcept>
#include <string>

namespace auxtrack {

// The four training regimes. The two TRACK_ONLY variants differ only in which
// dataset they are pointed at; the auxiliary variants add the depth branch
// (supervised) or the depth plus pose branches (self-supervised).
enum class Strategy {
  TRACK_ONLY_LARGE,
  TRACK_ONLY_SMALL,
  SUPERVISED_AUX,
  SELFSUP_AUX,
};

inline bool uses_depth_head(Strategy s) {
  return s == Strategy::SUPERVISED_AUX || s == Strategy::SELFSUP_AUX;
}

inline bool uses_pose_net(Strategy s) { return s == Strategy::SELFSUP_AUX; }

inline bool is_track_only(Strategy s) {
  return s == Strategy::TRACK_ONLY_LARGE || s == Strategy::TRACK_ONLY_SMALL;
}

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::TRACK_ONLY_LARGE: return "track_only_large";
    case Strategy::TRACK_ONLY_SMALL: return "track_only_small";
    case Strategy::SUPERVISED_AUX: return "supervised_aux";
    case Strategy::SELFSUP_AUX: return "selfsup_aux";
  }
  return "unknown";
}

inline Strategy strategy_from_name(const std::string& name) {
  if (name == "track_only_large") return Strategy::TRACK_ONLY_LARGE;
  if (name == "track_only_small") return Strategy::TRACK_ONLY_SMALL;
  if (name == "supervised_aux") return Strategy::SUPERVISED_AUX;
  if (name == "selfsup_aux") return Strategy::SELFSUP_AUX;
  throw std::invalid_argument("unknown strategy: " + name);
}

}  // namespace auxtrack
