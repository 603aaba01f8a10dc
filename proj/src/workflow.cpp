#include "protoadapt/workflow.hpp"

#include "protoadapt/datasets.hpp"
#include "protoadapt/errors.hpp"
#include "protoadapt/tensor_io.hpp"

namespace protoadapt {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const SourceAccessError*>(&e)) return kExitSourceAccess;
  if (dynamic_cast<const DivergenceError*>(&e)) return kExitDivergence;
  if (dynamic_cast<const EstimationError*>(&e) || dynamic_cast<const FactorizationError*>(&e) ||
      dynamic_cast<const GenerationError*>(&e)) {
    return kExitEstimation;
  }
  if (dynamic_cast<const Error*>(&e)) return kExitUsage;
  return kExitInternal;
}

fs::path resolve_split(const fs::path& data, const std::string& split) {
  if (fs::exists(data / "images.tns1")) return data;
  if (fs::exists(data / split / "images.tns1")) return data / split;
  throw UsageError("no " + split + " split found at " + data.string());
}

fs::path normalized_path(const fs::path& p) { return fs::weakly_canonical(fs::absolute(p)).lexically_normal(); }

bool paths_overlap(const fs::path& a, const fs::path& b) {
  auto contains = [](const fs::path& outer, const fs::path& inner) {
    auto o = outer.begin(), i = inner.begin();
    for (; o != outer.end(); ++o, ++i) {
      if (o->empty()) continue;  // trailing separator
      if (i == inner.end() || *o != *i) return false;
    }
    return true;
  };
  const fs::path na = normalized_path(a), nb = normalized_path(b);
  return contains(na, nb) || contains(nb, na);
}

fs::path gmm_manifest_path(const fs::path& gmm_file) {
  fs::path p = gmm_file;
  p += ".manifest";
  return p;
}

void save_gmm_manifest(const fs::path& gmm_file, const GmmManifest& m) {
  KeyValues kv;
  kv.set("source_dir", normalized_path(m.source_dir).string());
  kv.set("source_images_fingerprint", static_cast<unsigned long long>(m.source_images_fingerprint));
  kv.set("tau_fit", m.tau_fit);
  const KeyValues summary = source_summary_to_keyvalues(m.summary);
  for (const auto& [k, v] : summary.entries()) kv.set(k, v);
  kv.save(gmm_manifest_path(gmm_file));
}

GmmManifest load_gmm_manifest(const fs::path& gmm_file) {
  const fs::path path = gmm_manifest_path(gmm_file);
  if (!fs::exists(path)) throw UsageError("missing mixture manifest " + path.string());
  const KeyValues kv = KeyValues::load(path);
  GmmManifest m;
  m.source_dir = kv.require("source_dir");
  m.source_images_fingerprint = parse_uint("source_images_fingerprint", kv.require("source_images_fingerprint"));
  m.tau_fit = parse_double("tau_fit", kv.require("tau_fit"));
  m.summary = source_summary_from_keyvalues(kv);
  return m;
}

void check_source_free(const fs::path& target_dir, const GmmManifest& m) {
  constexpr const char* kForbidden = "source data forbidden during adaptation";
  if (paths_overlap(target_dir, m.source_dir)) {
    throw SourceAccessError(std::string(kForbidden) + ": " + target_dir.string() + " overlaps " +
                            m.source_dir.string());
  }
  const fs::path images = target_dir / "images.tns1";
  if (fs::exists(images) && io::file_fingerprint(images) == m.source_images_fingerprint) {
    throw SourceAccessError(std::string(kForbidden) + ": " + images.string() + " matches the source images");
  }
  if (fs::exists(target_dir / "labels.tns1")) {
    throw SourceAccessError("adaptation takes unlabeled target data only; " + target_dir.string() +
                            " contains labels.tns1");
  }
}

}  // namespace protoadapt
