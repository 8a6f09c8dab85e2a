#pragma once

#include "featrec/dataset.hpp"
#include "featrec/evaluate.hpp"
#include "featrec/loess.hpp"
#include "featrec/recommend.hpp"
#include "featrec/screening.hpp"
#include "featrec/simbench.hpp"
#include "featrec/sir.hpp"
