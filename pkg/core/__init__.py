# Core model module
