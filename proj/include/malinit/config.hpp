#ifndef MALINIT_CONFIG_HPP
#define MALINIT_CONFIG_HPP

#include <string>

#include "json.hpp"
#include "malinit/attack.hpp"
#include "malinit/data.hpp"
#include "malinit/nn.hpp"

namespace malinit {

inline nlohmann::json attack_to_json(const AttackConfig& a) {
  return {{"kind", to_string(a.kind)},
          {"r", a.r},
          {"s", a.s},
          {"attacked_filters", a.attacked_filters},
          {"scale_factor", a.scale_factor},
          {"placement", a.placement.kind == Placement::Kind::Stable ? "stable" : "shuffled"},
          {"placement_seed", a.placement.seed},
          {"start_parity", a.start_parity}};
}

inline AttackConfig attack_from_json(const nlohmann::json& j) {
  detail::require_keys(j, {"kind", "r", "s", "attacked_filters", "scale_factor", "placement", "placement_seed", "start_parity"},
                       "attack");
  AttackConfig a;
  a.kind = parse_attack_kind(j.at("kind").get<std::string>());
  a.r = j.value("r", a.r);
  a.s = j.value("s", a.s);
  a.attacked_filters = j.value("attacked_filters", a.attacked_filters);
  a.scale_factor = j.value("scale_factor", a.scale_factor);
  const auto placement = j.value("placement", std::string("stable"));
  if (placement == "stable") {
    a.placement = Placement::stable();
  } else if (placement == "shuffled") {
    a.placement = Placement::shuffled(0);
  } else {
    throw std::invalid_argument("attack: placement must be \"stable\" or \"shuffled\"");
  }
  a.placement.seed = j.value("placement_seed", std::uint64_t{0});
  a.start_parity = j.value("start_parity", false);
  a.validate();
  return a;
}

inline nlohmann::json train_to_json(const TrainConfig& t) {
  return {{"optimizer", t.optimizer.kind == Optimizer::Kind::Adam ? "adam" : "sgd"},
          {"lr", t.optimizer.lr},
          {"beta1", t.optimizer.beta1},
          {"beta2", t.optimizer.beta2},
          {"eps", t.optimizer.eps},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"seed", t.seed}};
}

inline TrainConfig train_from_json(const nlohmann::json& j) {
  detail::require_keys(j, {"optimizer", "lr", "beta1", "beta2", "eps", "epochs", "batch_size", "seed"}, "train");
  TrainConfig t;
  const auto opt = j.value("optimizer", std::string("adam"));
  if (opt == "adam") {
    t.optimizer = Optimizer::adam();
  } else if (opt == "sgd") {
    t.optimizer = Optimizer::sgd(0.01);
  } else {
    throw std::invalid_argument("train: optimizer must be \"adam\" or \"sgd\"");
  }
  t.optimizer.lr = j.value("lr", t.optimizer.lr);
  t.optimizer.beta1 = j.value("beta1", t.optimizer.beta1);
  t.optimizer.beta2 = j.value("beta2", t.optimizer.beta2);
  t.optimizer.eps = j.value("eps", t.optimizer.eps);
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.seed = j.value("seed", t.seed);
  t.validate();
  return t;
}

/**
 * Dataset reference:
 *   {"kind": "blobs", "classes", "dim", "per_class", "separation", "seed", "test_fraction"}
 *   {"kind": "csv", "path", "label_column", "header", "test_fraction", "seed"}
 *   {"kind": "idx", "images", "labels", "test_images", "test_labels", "max_train", "max_test", "test_fraction", "seed"}
 *   {"kind": "cache", "stem"}
 */
inline Dataset dataset_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "blobs") {
    detail::require_keys(j, {"kind", "classes", "dim", "per_class", "separation", "seed", "test_fraction"}, "dataset");
    return gaussian_blobs(j.value("classes", std::size_t{4}), j.value("dim", std::size_t{20}), j.value("per_class", std::size_t{250}),
                          j.value("separation", 6.0), j.value("seed", std::uint64_t{0}), j.value("test_fraction", 0.2));
  }
  if (kind == "csv") {
    detail::require_keys(j, {"kind", "path", "label_column", "header", "test_fraction", "seed"}, "dataset");
    CsvOptions o;
    o.label_column = j.value("label_column", o.label_column);
    o.header = j.value("header", o.header);
    o.test_fraction = j.value("test_fraction", o.test_fraction);
    o.seed = j.value("seed", o.seed);
    return load_csv(j.at("path").get<std::string>(), o);
  }
  if (kind == "idx") {
    detail::require_keys(j, {"kind", "images", "labels", "test_images", "test_labels", "max_train", "max_test", "test_fraction", "seed"},
                         "dataset");
    Dataset ds;
    if (j.contains("test_images")) {
      ds = append_test_split(load_idx(j.at("images").get<std::string>(), j.at("labels").get<std::string>()),
                             load_idx(j.at("test_images").get<std::string>(), j.at("test_labels").get<std::string>()));
    } else {
      ds = load_idx(j.at("images").get<std::string>(), j.at("labels").get<std::string>(), j.value("test_fraction", 0.2),
                    j.value("seed", std::uint64_t{0}));
    }
    if (j.contains("max_train") || j.contains("max_test"))
      ds = subsample(std::move(ds), j.value("max_train", ds.train_idx.size()), j.value("max_test", ds.test_idx.size()));
    return ds;
  }
  if (kind == "cache") {
    detail::require_keys(j, {"kind", "stem"}, "dataset");
    return load_dataset(j.at("stem").get<std::string>());
  }
  throw std::invalid_argument("dataset: unknown kind '" + kind + "'");
}

}  // namespace malinit

#endif  // MALINIT_CONFIG_HPP
