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
#include "treeobf/checkins.h"

#include <string>

#include "absl/strings/ascii.h"
#include "absl/strings/numbers.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "absl/strings/str_split.h"

namespace treeobf {

absl::StatusOr<std::vector<CheckInRecord>> ReadCheckIns(std::istream& in) {
  std::vector<CheckInRecord> records;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    absl::string_view view = absl::StripAsciiWhitespace(line);
    if (view.empty()) continue;
    const char sep = view.find('\t') != absl::string_view::npos ? '\t' : ',';
    std::vector<absl::string_view> fields = absl::StrSplit(view, sep);
    if (fields.size() != 5) {
      return absl::InvalidArgumentError(absl::StrCat(
          "line ", line_number, ": expected 5 fields, got ", fields.size()));
    }
    CheckInRecord record;
    const bool lat_ok = absl::SimpleAtod(
        absl::StripAsciiWhitespace(fields[2]), &record.lat);
    const bool lon_ok = absl::SimpleAtod(
        absl::StripAsciiWhitespace(fields[3]), &record.lon);
    if (!lat_ok || !lon_ok) {
      if (line_number == 1 && records.empty()) continue;  // header
      return absl::InvalidArgumentError(
          absl::StrCat("line ", line_number, ": non-numeric coordinates"));
    }
    record.user = std::string(absl::StripAsciiWhitespace(fields[0]));
    record.timestamp = std::string(absl::StripAsciiWhitespace(fields[1]));
    record.location_id = std::string(absl::StripAsciiWhitespace(fields[4]));
    records.push_back(std::move(record));
  }
  return records;
}

void WriteCheckIns(std::ostream& out, std::span<const CheckInRecord> records) {
  out << "user,checkin_time,latitude,longitude,location_id\n";
  for (const CheckInRecord& r : records) {
    out << r.user << ',' << r.timestamp << ','
        << absl::StrFormat("%.17g,%.17g", r.lat, r.lon) << ',' << r.location_id
        << '\n';
  }
}

}  // namespace treeobf
