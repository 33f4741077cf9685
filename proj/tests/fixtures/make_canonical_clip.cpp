// Writes canonical_clip.fcv: the zero-noise, all-0.5 reference video at seed 7.
// Build target: make_canonical_clip (not part of the default build).
#include <iostream>

#include "facet/data.hpp"

int main(int argc, char** argv) {
  const std::string out = argc > 1 ? argv[1] : "canonical_clip.fcv";
  facet::io::write_file(out, facet::encode_videos({facet::canonical_video(facet::RunConfig{}, 7)}));
  std::cout << "wrote " << out << '\n';
}
