import streamlit as st
import pandas as pd
from concurrent.futures import ThreadPoolExecutor, as_completed
from datetime import datetime
from pathlib import Path
import config
from cli import summarize_run
from streamlit_autorefresh import st_autorefresh


st.set_page_config(page_title="Dyadic Flow Runs", layout="wide")

# Re-read run directories every REFRESH_INTERVAL seconds
st_autorefresh(interval=config.REFRESH_INTERVAL * 1000, key="refresh")

st.title("🧬 Dyadic Flow Results")

st.sidebar.header("Settings")
runs_dir = Path(st.sidebar.text_input("Runs directory", config.RUNS_DIR))
available = sorted(p for p in runs_dir.glob("*") if (p / config.MANIFEST_FILE).is_file()) if runs_dir.is_dir() else []
selected = st.sidebar.multiselect("Runs", [p.name for p in available], default=[p.name for p in available])


def load_runs(paths):
    summaries = {}
    errors = []
    with ThreadPoolExecutor(max_workers=config.MAX_WORKERS) as executor:
        futures = {executor.submit(summarize_run, p): p for p in paths}
        for future in as_completed(futures):
            path = futures[future]
            try:
                name, summary, error = future.result()
                if summary is not None:
                    summaries[name] = summary
                elif error:
                    errors.append((name, error))
            except Exception as e:
                errors.append((path.name, str(e)))
    return summaries, errors


summaries, errors = load_runs([p for p in available if p.name in selected])

st.caption(f"Last updated: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')} (refreshes every {config.REFRESH_INTERVAL} s)")

st.subheader("📁 Runs")
if summaries:
    for name in sorted(summaries):
        summary = summaries[name]
        with st.expander(f"{name} - {summary['subcommand']} (seed {summary['seed']})"):
            if summary["chains"]:
                st.markdown("**Chains**")
                st.dataframe(pd.DataFrame(summary["chains"]), hide_index=True, width='stretch')

            if "score" in summary:
                cols = st.columns(len(summary["score"]))
                for col, (variant, score) in zip(cols, sorted(summary["score"].items())):
                    with col:
                        st.metric(f"Mean CRPS ({variant})", "{:.4f}".format(score["mean_crps"]))
                        if score.get("max_rhat") is not None:
                            st.caption("max Rhat {:.3f}, min ESS {:.0f}".format(score["max_rhat"], score["min_ess"]))

            for key, label in (("comparison", "Variant comparison"), ("coverage", "Coverage"),
                               ("diagnostics", "Diagnostics"), ("vectors", "Vector field")):
                if key in summary:
                    st.markdown(f"**{label}**")
                    st.dataframe(summary[key], hide_index=True, width='stretch')
else:
    st.info("No runs found.")

if errors:
    st.subheader("⚠️ Errors")
    for name, error in errors:
        st.error(f"{name}: {error}")
