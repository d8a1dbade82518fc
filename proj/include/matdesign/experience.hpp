#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "matdesign/archive.hpp"
#include "matdesign/elements.hpp"

namespace matdesign {

enum class ExperienceSource : std::uint8_t { Live = 0, Tep = 1 };

inline std::string_view source_name(ExperienceSource s) { return s == ExperienceSource::Live ? "live" : "tep"; }

/// One transition (s, a, s', r, done). For pool entries s + a == s'.
struct Experience {
  Composition s = Composition::Zero();
  Composition a = Composition::Zero();
  Composition s_next = Composition::Zero();
  double r = 0.0;
  bool done = false;
  ExperienceSource source = ExperienceSource::Live;

  void write(ArchiveWriter& out) const {
    out.put(s);
    out.put(a);
    out.put(s_next);
    out.put(r);
    out.put(done);
    out.put(static_cast<std::uint8_t>(source));
  }

  static Experience read(ArchiveReader& in) {
    Experience e;
    e.s = in.get_matrix<Composition>();
    e.a = in.get_matrix<Composition>();
    e.s_next = in.get_matrix<Composition>();
    e.r = in.get<double>();
    e.done = in.get_bool();
    e.source = static_cast<ExperienceSource>(in.get<std::uint8_t>());
    return e;
  }
};

/// A learner batch. `buffer_index` is the replay slot of each item, or -1 for
/// entries injected from the experience pool; `weights` are importance weights.
struct TrainingBatch {
  std::vector<Experience> items;
  std::vector<std::int64_t> buffer_index;
  Eigen::VectorXd weights;

  std::size_t size() const { return items.size(); }
};

}  // namespace matdesign
