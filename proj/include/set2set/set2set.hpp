#pragma once

#include "binary_io.hpp"
#include "checkpoint.hpp"
#include "data.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "experiment.hpp"
#include "log.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "optimizer.hpp"
#include "sampling.hpp"
#include "synthetic.hpp"
#include "trainer.hpp"
