#pragma once

#include "dimo/errors.hpp"
#include "dimo/numcore.hpp"
#include "dimo/corpus.hpp"
#include "dimo/coocgraph.hpp"
#include "dimo/itemrepr.hpp"
#include "dimo/sessionmodel.hpp"
#include "dimo/trainer.hpp"
#include "dimo/evaluation.hpp"
#include "dimo/explain.hpp"
#include "dimo/fixtures.hpp"
