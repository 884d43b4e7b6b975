#pragma once

// Everything in one include.

#include "baselines.hpp"
#include "config.hpp"
#include "container.hpp"
#include "dataset.hpp"
#include "diffops.hpp"
#include "generator.hpp"
#include "kspace.hpp"
#include "metrics.hpp"
#include "objective.hpp"
#include "phantom.hpp"
#include "trainer.hpp"
