"""
DegreeMix report browser.

Lists run directories under the output dir, shows each run's manifest and
renders its CSV reports as tables. Run with: streamlit run app/ui/main.py
"""
import streamlit as st
import os
import logging
from pathlib import Path
import sys

# Ensure root path is in sys.path
root_path = Path(__file__).resolve().parent.parent.parent
if str(root_path) not in sys.path:
    sys.path.append(str(root_path))

try:
    from app.utils import helpers as utils
    from app.models import config
except ImportError:
    from ..utils import helpers as utils
    from ..models import config

logger = logging.getLogger(__name__)

# ============================================================================
# PAGE CONFIG
# ============================================================================
st.set_page_config(
    page_title="DegreeMix Reports",
    layout="wide",
    initial_sidebar_state="expanded"
)

st.markdown("""
<style>
    #MainMenu, footer {visibility: hidden;}
    .run-meta {color: #6B7280; font-size: 0.85rem;}
</style>
""", unsafe_allow_html=True)

# ============================================================================
# SESSION STATE
# ============================================================================
if "base_dir" not in st.session_state:
    st.session_state["base_dir"] = config.OUTPUT_DIR
if "selected_run" not in st.session_state:
    st.session_state["selected_run"] = None

# ============================================================================
# SIDEBAR: RUN PICKER
# ============================================================================
with st.sidebar:
    st.header("Runs")
    base_dir = st.text_input("Output directory", value=st.session_state["base_dir"])
    st.session_state["base_dir"] = base_dir
    runs = utils.list_runs(base_dir)
    if not runs:
        st.info(f"No runs with a manifest under {base_dir}")
    else:
        labels = [f"{r['run_id']} ({r['command']})" for r in runs]
        choice = st.selectbox("Run", labels, index=0)
        st.session_state["selected_run"] = runs[labels.index(choice)]

# ============================================================================
# MAIN: MANIFEST + REPORTS
# ============================================================================
st.title("DegreeMix Reports")
run = st.session_state["selected_run"]

if run is None:
    st.write("Pick a run in the sidebar.")
else:
    manifest = utils.read_manifest(os.path.join(run["path"], utils.MANIFEST_FILE))
    st.markdown(f"<div class='run-meta'>{run['path']}</div>", unsafe_allow_html=True)

    manifest_tab, reports_tab = st.tabs(["Manifest", "Reports"])
    with manifest_tab:
        st.dataframe([{"key": k, "value": v} for k, v in manifest.items()], use_container_width=True)

    with reports_tab:
        reports = sorted(name for name in os.listdir(run["path"]) if name.endswith(".csv"))
        if not reports:
            st.info("This run wrote no CSV reports.")
        for name in reports:
            with st.expander(name, expanded=name in ("metrics.csv", "metrics_by_degree.csv", "calibration.csv")):
                try:
                    st.dataframe(utils.read_csv(os.path.join(run["path"], name)), use_container_width=True)
                except (OSError, UnicodeDecodeError) as e:
                    logger.error(f"Failed to read {name}: {e}")
                    st.error(f"Could not read {name}")
        summary = os.path.join(run["path"], "taylor_summary.txt")
        if os.path.exists(summary):
            st.subheader("Expansion check")
            with open(summary, "r", encoding="utf-8") as f:
                st.code(f.read())
