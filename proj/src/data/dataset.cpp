#include "cmunet/dataset.hpp"

#include <exception>
#include <fstream>

#include <json.hpp>

namespace cmunet {

std::string image_path(const std::string& root, const std::string& id) {
  return root + "/images/" + id + ".ppm";
}

std::string mask_path(const std::string& root, const std::string& id) {
  return root + "/masks/" + id + ".pgm";
}

DatasetMeta load_meta(const std::string& root) {
  const std::string path = root + "/meta.json";
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open");
  try {
    nlohmann::json j;
    in >> j;
    DatasetMeta m;
    m.num_classes = j.at("num_classes").get<std::int64_t>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.train = j.at("splits").at("train").get<std::vector<std::string>>();
    m.val = j.at("splits").at("val").get<std::vector<std::string>>();
    if (m.num_classes < 2 || m.num_classes > 255) throw DataError(path + ": bad num_classes");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

void save_meta(const std::string& root, const DatasetMeta& meta) {
  const nlohmann::json j = {{"num_classes", meta.num_classes},
                            {"class_names", meta.class_names},
                            {"splits", {{"train", meta.train}, {"val", meta.val}}}};
  const std::string path = root + "/meta.json";
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot write");
  out << j.dump(2) << '\n';
}

std::vector<SegSample> load_samples(const std::string& root, const DatasetMeta& meta,
                                    const std::vector<std::string>& ids) {
  std::vector<SegSample> out(ids.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < ids.size(); ++i) {
    try {
      out[i] = load_sample(image_path(root, ids[i]), mask_path(root, ids[i]), meta.num_classes);
      out[i].id = ids[i];
    } catch (...) {
#pragma omp critical(cmunet_load_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

}  // namespace cmunet
