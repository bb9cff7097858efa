#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "featherpoint/geometry.hpp"
#include "featherpoint/synth.hpp"

namespace featherpoint {

/// Parses a 3x3 row-major whitespace-separated homography. Throws
/// FormatError unless exactly nine finite numbers are present and
/// ValueError if the matrix is not invertible.
Homography parse_homography(const std::string& text);
std::string format_homography(const Homography& h);

struct HPatchesLoad {
    std::vector<SequencePair> pairs;
    std::vector<std::string> warnings;
    std::size_t sequences_loaded = 0;
    std::size_t sequences_skipped = 0;
    std::size_t pairs_skipped = 0;
};

/// Loads pairs (1,k), k = 2..6, from every sequence folder of an HPatches
/// tree. Kind comes from the `i_` / `v_` folder prefix. Images may be
/// .ppm or .pgm. A bad pair or sequence is skipped with a line
///   warning: skipping <what>: <reason>
/// written to `warn` (when non-null) and recorded in `warnings`. Throws
/// IoError if no sequence loads.
HPatchesLoad hpatches_load(const std::filesystem::path& dir, std::ostream* warn = nullptr);

/// Writes sequences as <dir>/<name>/{1..n}.pgm plus H_1_k text files.
void export_hpatches(const std::filesystem::path& dir, const std::vector<SyntheticSequence>& seqs);

/// The gen-data corpus: `count` sequences alternating illumination and
/// viewpoint, derived from `seed`.
std::vector<SyntheticSequence> synthetic_corpus(std::uint64_t seed, std::size_t count, std::size_t height,
                                                std::size_t width);

}  // namespace featherpoint
