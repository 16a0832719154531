// Copyright 2026 The treeobf Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#ifndef TREEOBF_CHECKINS_H_
#define TREEOBF_CHECKINS_H_

#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "absl/status/statusor.h"

namespace treeobf {

// One row of a Gowalla-style check-in log:
// user, checkin_time, latitude, longitude, location_id.
struct CheckInRecord {
  std::string user;
  std::string timestamp;  // ISO-8601, carried through untouched
  double lat = 0.0;
  double lon = 0.0;
  std::string location_id;
};

// Maps degrees to region-local coordinates:
//   x = x_offset + x_scale * lon,  y = y_offset + y_scale * lat.
struct GeoAffine {
  double x_scale = 1.0;
  double x_offset = 0.0;
  double y_scale = 1.0;
  double y_offset = 0.0;

  double ToX(double lon) const { return x_offset + x_scale * lon; }
  double ToY(double lat) const { return y_offset + y_scale * lat; }
  double ToLon(double x) const { return (x - x_offset) / x_scale; }
  double ToLat(double y) const { return (y - y_offset) / y_scale; }
};

struct IngestStats {
  int64_t total = 0;
  int64_t in_region = 0;
  int64_t out_of_region = 0;
  int64_t leaves_removed = 0;
};

// Reads comma- or tab-separated check-ins. A header line is optional and
// recognized by a non-numeric latitude field.
absl::StatusOr<std::vector<CheckInRecord>> ReadCheckIns(std::istream& in);

void WriteCheckIns(std::ostream& out, std::span<const CheckInRecord> records);

}  // namespace treeobf

#endif  // TREEOBF_CHECKINS_H_
