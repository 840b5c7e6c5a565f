#pragma once

#include "aenc/dataset.hpp"
#include "aenc/encoder.hpp"

#include <json.hpp>

#include <set>
#include <string>
#include <vector>

namespace aenc {

struct SynthEpisode {
  std::string name;
  std::string movie;
  Index trs = 0;
};

struct SynthSpec {
  int subjects = 2;
  Index parcels = 20;
  std::vector<BackboneInfo> backbones = {{"feat0", 8}};
  std::vector<SynthEpisode> episodes;
  Index embed_dim = 8;
  Index kernel_width = 9;            // planted kernel taps; 0 = no temporal mixing
  std::string kernel_shape = "hrf";  // hrf | random | delta
  double noise_std = 0.0;
  double group_weight = 0.7;    // variance share routed through the group head
  double subject_weight = 0.3;  // share routed through subject-residual heads
  std::set<std::string> repeat_movies;  // emit a second, re-noised presentation
  double tr_seconds = 1.49;
  std::uint64_t seed = 0;

  void validate() const;
};

SynthSpec synth_spec_from_json(const nlohmann::json& j);
nlohmann::json synth_spec_to_json(const SynthSpec& spec);

struct SynthResult {
  Dataset dataset;
  EncoderConfig planted_config;
  EncoderParams planted_params;
};

// Features are i.i.d. standard normal; BOLD is the planted forward output
// plus Gaussian noise. Head columns are rescaled so the pooled per-parcel
// signal variance is ~1, making noise_std directly the noise-to-signal
// ratio. All tensors (and the planted parameters) are f32-rounded at
// generation, so saving and re-loading the dataset is bit-exact; the
// zero-noise identity BOLD == forward(planted, features) therefore holds to
// f32 rounding of the forward output. Deterministic per seed.
SynthResult synth_generate(const SynthSpec& spec);

}  // namespace aenc
