// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "acap/metrics.hpp"
#include "oracles/metric_oracle.hpp"

namespace support {

inline acap::metrics::Tokens words(const std::string& s) {
  std::istringstream in(s);
  acap::metrics::Tokens out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

/// Fixed five-item corpus with partial overlaps, repeated n-grams, several
/// references of differing lengths and one item with no overlap at all.
inline acap::metrics::EvalCorpus mini_corpus() {
  using acap::metrics::EvalItem;
  return {{
      EvalItem{"a1", words("a car engine is running loudly"),
               {words("a car engine is running"), words("the engine of a car runs loudly nearby"),
                words("an engine idles")}},
      EvalItem{"a2", words("people talk talk in a hall"),
               {words("people are talking in a large hall"), words("a crowd talks in the hall")}},
      EvalItem{"a3", words("a door closes"),
               {words("a door slams shut"), words("someone closes a door"), words("door closing")}},
      EvalItem{"a4", words("rain falls on the roof of a car"),
               {words("rain falls on a car roof"), words("heavy rain hits the roof of the car")}},
      EvalItem{"a5", words("birds sing"), {words("an alarm beeps repeatedly")}},
  }};
}

inline std::vector<oracle::Item> to_oracle(const acap::metrics::EvalCorpus& c) {
  std::vector<oracle::Item> out;
  for (const auto& it : c.items) out.push_back({it.hypothesis, it.references});
  return out;
}

}  // namespace support
