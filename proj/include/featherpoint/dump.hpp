#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "featherpoint/keypoints.hpp"
#include "featherpoint/metrics.hpp"

namespace featherpoint {

/// Header line `x,y,score`, then one row per keypoint. Scores use 17
/// significant digits so a read-back is exact.
std::string keypoints_to_csv(const std::vector<Keypoint>& kps);
/// Throws FormatError on a bad header or row.
std::vector<Keypoint> keypoints_from_csv(const std::string& text);

/// First line `<count> <dim>`, second line the base64 of the row-major
/// little-endian float64 descriptor values.
std::string descriptors_to_text(const DescriptorSet& d);
DescriptorSet descriptors_from_text(const std::string& text);

/// Writes <prefix>.csv and <prefix>.desc for one extraction.
void write_keypoint_dump(const std::filesystem::path& prefix, const Extraction& e);

/// One row per pair: name,kind,repeatability,correctness,keypoints_a,keypoints_b,matches.
std::string eval_report_csv(const EvalReport& r);

}  // namespace featherpoint
