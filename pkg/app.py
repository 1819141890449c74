"""
Streamlit application entry point.

Run this script with ``streamlit run app.py`` to open the nucleation
dashboard.
"""

from src.ui import main

if __name__ == "__main__":
    main()
