from setuptools import setup, find_packages

setup(
    name="covis_fusion",
    version="0.1.0",
    package_dir={"": "src"},
    packages=find_packages(where="src", exclude=["tests*"]),
    include_package_data=True,
    install_requires=[
        "numpy>=1.22.0",
        "scipy>=1.8.0",
        "scikit-learn>=1.1.0",
        "shapely>=2.0.0",
        "typing-extensions>=4.5.0",
        "python-dotenv>=1.0.0",
        "json-canonical>=2.0.0",
    ],
    extras_require={
        "dev": [
            "pytest>=7.0.0",
            "hypothesis>=6.0.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "covis-fusion=covis_fusion.cli:main",
        ],
    },
    python_requires=">=3.8",
    description="Radar/camera cooperative perception: co-visible vehicle matching and view alignment",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    setup_requires=[
        "wheel",
        "setuptools>=42",
    ],
)
