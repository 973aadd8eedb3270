#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "contactsense/preprocessing.hpp"
#include "contactsense/types.hpp"

namespace contactsense {

// Recording CSV: header
//   t_ms,q_des_0..6,q_act_0..6,qd_des_0..6,qd_act_0..6,tau_0..6,contact
// (37 columns), values as shortest round-trip decimals, t_ms ascending by 5.
// A sidecar "<stem>.meta.json" carries label, motion_id, setup_id.
// See docs/file-formats.md.
void save_recording(const Recording& recording, const std::string& csv_path);
Recording load_recording(const std::string& csv_path);

// Every *.csv in the directory, sorted by filename.
std::vector<Recording> load_recordings_dir(const std::string& dir);

// FNV-1a 64 of the file bytes.
std::uint64_t file_digest(const std::string& path);

// Binary dataset cache keyed by a hash of the preprocessing parameters and
// the source file digests; loading with a different key fails with
// DataError("stale cache ...").
void cache_dataset(const LabeledDataset& dataset, const std::string& path,
                   const std::vector<std::string>& source_files);
LabeledDataset load_cached_dataset(const std::string& path,
                                   const std::vector<std::string>& source_files,
                                   const PreprocessingParams& params);

std::uint64_t dataset_cache_key(const PreprocessingParams& params,
                                const std::vector<std::string>& source_files);

}  // namespace contactsense
