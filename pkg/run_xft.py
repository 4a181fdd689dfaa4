"""
Script to run XFT Lab experiments.
Usage: python run_xft.py run presets/jw-baseline.yaml
       python run_xft.py sweep presets/lambda-sweep.yaml --axis lambda --values 0,0.5,1
"""

from app.cli import main


if __name__ == "__main__":
    main()
