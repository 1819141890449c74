"""
Streamlit UI module.

This module provides a web dashboard for the nucleation toolkit: a table of
derived constants for user-entered parameters, the exact toy-chain solver,
and a browser for study directories written by ``nucleation run``.
"""

import math
import logging
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
import streamlit as st

from src.harness import analyze_study, read_records, records_frame
from src.models import ChainMode, ModelParams, ScalingReport
from src.params import derive, format_derived
from src.toymodel import absorption_prob, build_xi, minimal_beta, solve_table

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def parse_beta_range(text: str) -> List[float]:
    """
    Parse a β range, either ``start:stop:step`` (stop included) or a
    comma separated list.

    Args:
        text: Range text

    Returns:
        list: Increasing positive β values

    Raises:
        ValueError: If the text is malformed or yields a nonpositive β.
    """
    text = text.strip()
    if not text:
        raise ValueError("empty beta range")
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise ValueError(f"expected start:stop:step with step > 0, got {text!r}")
        start, stop, step = parts
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        betas = [round(start + k * step, 12) for k in range(count)]
    else:
        betas = sorted(float(p) for p in text.split(",") if p.strip())
    if not betas or betas[0] <= 0:
        raise ValueError("every beta must be positive")
    return betas


def derived_table(params: ModelParams) -> pd.DataFrame:
    """Derived constants as a two-column table."""
    return pd.DataFrame(format_derived(derive(params)), columns=["quantity", "value"])


def toy_table(params: ModelParams, beta: Optional[float] = None) -> pd.DataFrame:
    """h and mean absorption time per start state of the history chain."""
    spec = build_xi(params, ChainMode.HISTORY, beta)
    return pd.DataFrame(solve_table(spec))


def h_curve(params: ModelParams, betas: List[float]) -> pd.DataFrame:
    """h((2,2)) and its rate −(1/β) ln h over a β grid; admissible β only."""
    floor = minimal_beta(params)
    rows = []
    for beta in betas:
        if beta < floor:
            continue
        h = absorption_prob(build_xi(params, ChainMode.HISTORY, beta), (2, 2))
        rows.append({"beta": beta, "h": h, "rate": -math.log(h) / beta})
    return pd.DataFrame(rows, columns=["beta", "h", "rate"])


def load_study(directory: str) -> Tuple[pd.DataFrame, ScalingReport]:
    """Records table and scaling report of a study directory."""
    path = Path(directory)
    if not path.is_dir():
        raise ValueError(f"Study directory not found: {directory}")
    records = read_records(path)
    return records_frame(records), analyze_study(path)


def params_form(key: str, with_theta: bool = True) -> Optional[ModelParams]:
    """Parameter inputs; returns validated parameters or None after showing the error."""
    col1, col2, col3, col4 = st.columns(4)
    with col1:
        U = st.number_input("U", value=1.0, min_value=0.01, key=f"{key}_U")
    with col2:
        Delta = st.number_input("Delta", value=1.6, key=f"{key}_Delta")
    with col3:
        Theta = st.number_input("Theta", value=2.4, key=f"{key}_Theta") if with_theta else None
    with col4:
        beta = st.number_input("beta", value=10.0, min_value=0.01, key=f"{key}_beta")
    try:
        return ModelParams(U=U, Delta=Delta, Theta=Theta, beta=beta)
    except ValueError as e:
        st.error(f"Invalid parameters: {e}")
        logger.error(f"Invalid parameters: {e}")
        return None


def display_scaling_report(report: ScalingReport):
    """
    Show a scaling report.

    Args:
        report: Report computed from a records directory
    """
    per_beta = pd.DataFrame([s.model_dump() for s in report.per_beta])
    st.dataframe(per_beta)
    st.caption(f"Coalescence nonincreasing: {report.coalescence_nonincreasing}; "
               f"subcritical pass nondecreasing: {report.subcritical_pass_nondecreasing}")
    if report.slope is None:
        st.info(f"Fit omitted: {report.fit_omitted_reason}")
        return
    col1, col2, col3 = st.columns(3)
    with col1:
        st.metric("Slope", f"{report.slope:.3f}")
    with col2:
        target = "-" if report.target_exponent is None else f"{report.target_exponent:.3f}"
        st.metric("Gamma - Theta_eff", target)
    with col3:
        st.metric("Medians increasing", str(report.medians_increasing))
    valid = per_beta.dropna(subset=["median_tau"])
    if not valid.empty:
        chart = pd.DataFrame({"ln median tau": np.log(valid["median_tau"].astype(float))})
        chart.index = valid["beta"]
        st.line_chart(chart)


def derived_view():
    st.header("Derived constants")
    params = params_form("derived")
    if params is not None:
        st.table(derived_table(params))


def toy_view():
    st.header("Birth-death toy chain")
    params = params_form("toy")
    if params is None:
        return
    try:
        st.subheader("Absorption per start state")
        st.dataframe(toy_table(params))
    except ValueError as e:
        st.error(str(e))
        logger.error(f"Toy solver failed: {e}")
        return

    text = st.text_input("beta range (start:stop:step or list)", value="5:40:5")
    try:
        curve = h_curve(params, parse_beta_range(text))
    except ValueError as e:
        st.error(f"Invalid beta range: {e}")
        return
    if curve.empty:
        st.info("No admissible beta in the range")
        return
    st.line_chart(curve.set_index("beta")[["rate"]])
    st.dataframe(curve)


def study_view():
    st.header("Study browser")
    directory = st.text_input("Records directory", value="results")
    if not st.button("Load study"):
        return
    try:
        with st.spinner("Loading records..."):
            frame, report = load_study(directory)
    except (ValueError, OSError) as e:
        st.error(f"Error loading study: {str(e)}")
        logger.error(f"Error loading study {directory}: {str(e)}")
        return
    st.subheader(f"Records ({len(frame)})")
    st.dataframe(frame)
    st.subheader("Scaling")
    display_scaling_report(report)


def main():
    """Main function to run the Streamlit application."""
    st.set_page_config(
        page_title="Kawasaki Nucleation",
        layout="wide"
    )

    st.title("Kawasaki lattice-gas nucleation")
    st.markdown("""
    Derived constants, the exact toy chain and nucleation-time studies for the
    two-dimensional Kawasaki lattice gas at low temperature.
    """)

    tab1, tab2, tab3 = st.tabs(["Parameters", "Toy model", "Studies"])
    with tab1:
        derived_view()
    with tab2:
        toy_view()
    with tab3:
        study_view()


if __name__ == "__main__":
    main()
