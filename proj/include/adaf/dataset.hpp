#pragma once

#include "adaf/facegen.hpp"
#include "adaf/image_png.hpp"
#include "adaf/rng.hpp"
#include "adaf/types.hpp"

#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace adaf {

// Per identity the views are split in half: S1 is the clean reference /
// held-out subset, S2 is the subset handed to protection and fine-tuning.
struct FaceDataset {
  int image_h = 0, image_w = 0;
  std::vector<SyntheticIdentity> identities;
  std::vector<std::vector<Matrix<Real>>> s1, s2;  // [identity][view]

  int n_identities() const { return static_cast<int>(identities.size()); }
};

inline FaceDataset synth_face_dataset(int n_ids, int images_per_id, int h, int w,
                                      std::uint64_t seed) {
  if (images_per_id < 2 || images_per_id % 2 != 0)
    throw std::invalid_argument("dataset: images_per_id must be even and >= 2");
  Rng root(seed);
  Rng rid = root.derive("data.ids");
  FaceDataset ds;
  ds.image_h = h;
  ds.image_w = w;
  ds.identities = make_identities(n_ids, rid);
  ds.s1.resize(static_cast<std::size_t>(n_ids));
  ds.s2.resize(static_cast<std::size_t>(n_ids));
  const int half = images_per_id / 2;
  for (int i = 0; i < n_ids; ++i) {
    Rng rv = root.derive("data.views", static_cast<std::uint64_t>(i));
    for (int j = 0; j < images_per_id; ++j) {
      Matrix<Real> img = render_face(ds.identities[static_cast<std::size_t>(i)],
                                     sample_view(rv), h, w);
      auto& bucket = j < half ? ds.s1 : ds.s2;
      bucket[static_cast<std::size_t>(i)].push_back(std::move(img));
    }
  }
  return ds;
}

inline std::string dataset_image_rel_path(int identity, const std::string& split, int view) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "id_%02d/%s_view%d.png", identity, split.c_str(), view);
  return buf;
}

// Layout: <dir>/manifest.jsonl plus one 16-bit PNG per view. Each manifest
// line records identity index, split, relative path, and the raw identity
// parameter vector so the dataset is reconstructible without the PNGs.
inline void save_dataset(const FaceDataset& ds, const std::string& dir,
                         const std::map<std::string, std::string>& text) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream mf(dir + "/manifest.jsonl");
  if (!mf) throw std::runtime_error("dataset: cannot write " + dir + "/manifest.jsonl");
  {
    nlohmann::json meta;
    meta["meta"] = text;  // config hash + seed stamp
    mf << meta.dump() << "\n";
  }
  for (int i = 0; i < ds.n_identities(); ++i) {
    char sub[32];
    std::snprintf(sub, sizeof sub, "id_%02d", i);
    fs::create_directories(fs::path(dir) / sub);
    auto dump_split = [&](const char* split, const std::vector<Matrix<Real>>& imgs) {
      for (int j = 0; j < static_cast<int>(imgs.size()); ++j) {
        std::string rel = dataset_image_rel_path(i, split, j);
        write_png16(dir + "/" + rel, imgs[static_cast<std::size_t>(j)], ds.image_h, ds.image_w,
                    text);
        nlohmann::json row;
        row["identity"] = i;
        row["split"] = split;
        row["view"] = j;
        row["path"] = rel;
        row["params"] = ds.identities[static_cast<std::size_t>(i)].raw();
        mf << row.dump() << "\n";
      }
    };
    dump_split("s1", ds.s1[static_cast<std::size_t>(i)]);
    dump_split("s2", ds.s2[static_cast<std::size_t>(i)]);
  }
}

inline FaceDataset load_dataset(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.jsonl");
  if (!mf) throw std::runtime_error("dataset: cannot open " + dir + "/manifest.jsonl");
  FaceDataset ds;
  std::string line;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    nlohmann::json row = nlohmann::json::parse(line);
    if (row.contains("meta")) continue;
    int i = row.at("identity").get<int>();
    std::string split = row.at("split").get<std::string>();
    int view = row.at("view").get<int>();
    if (i < 0 || view < 0) throw std::runtime_error("dataset: bad manifest indices");
    if (i >= static_cast<int>(ds.identities.size())) {
      ds.identities.resize(static_cast<std::size_t>(i) + 1);
      ds.s1.resize(ds.identities.size());
      ds.s2.resize(ds.identities.size());
    }
    auto params = row.at("params").get<std::vector<double>>();
    ds.identities[static_cast<std::size_t>(i)] = SyntheticIdentity::from_raw(params);
    ImageFile img = read_png16(dir + "/" + row.at("path").get<std::string>());
    if (ds.image_h == 0) {
      ds.image_h = img.h;
      ds.image_w = img.w;
    } else if (ds.image_h != img.h || ds.image_w != img.w) {
      throw std::runtime_error("dataset: inconsistent image sizes");
    }
    if (split != "s1" && split != "s2") throw std::runtime_error("dataset: bad split " + split);
    auto& bucket = split == "s1" ? ds.s1 : ds.s2;
    auto& views = bucket[static_cast<std::size_t>(i)];
    if (view >= static_cast<int>(views.size())) views.resize(static_cast<std::size_t>(view) + 1);
    views[static_cast<std::size_t>(view)] = std::move(img.rgb);
  }
  if (ds.identities.empty()) throw std::runtime_error("dataset: empty manifest");
  return ds;
}

}  // namespace adaf
