#ifndef MALINIT_MALINIT_HPP
#define MALINIT_MALINIT_HPP

#include "malinit/analysis.hpp"
#include "malinit/attack.hpp"
#include "malinit/config.hpp"
#include "malinit/data.hpp"
#include "malinit/detect.hpp"
#include "malinit/experiment.hpp"
#include "malinit/init.hpp"
#include "malinit/knockout.hpp"
#include "malinit/montecarlo.hpp"
#include "malinit/nn.hpp"
#include "malinit/special.hpp"
#include "malinit/tensor.hpp"

#endif  // MALINIT_MALINIT_HPP
